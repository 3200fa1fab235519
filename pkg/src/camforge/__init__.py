"""camforge: train a generative camera-trace injector against simulated
camera models, and measure the attack with the full forensic harness."""

__version__ = "0.1.0"
