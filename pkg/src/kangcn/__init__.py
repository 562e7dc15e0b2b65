"""Graph emulator for transient ice-sheet fields: RBF-KAN front end, GCN stack, residual one-step rollout."""

__version__ = "0.1.0"
