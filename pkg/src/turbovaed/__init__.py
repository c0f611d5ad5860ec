"""Mobile-oriented video VAE decoder: operators, decoder graph, distillation and benchmarks."""

__version__ = "0.1.0"
