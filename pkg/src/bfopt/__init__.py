"""Hot-metal temperature forecasting (classical and quantum-hybrid LSTM heads) and
forecast-driven PCI optimization, with a synthetic furnace for testing."""

__version__ = "0.1.0"
