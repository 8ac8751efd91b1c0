"""Node-level graph autoencoder pretraining and downstream graph learning."""

__version__ = "0.1.0"
