"""pcgkit: sparse preconditioned conjugate gradients with classic and learned
LDL^T preconditioners, P1 finite-element problem generators, and a benchmark
harness."""

__version__ = "0.1.0"
