"""Distributed attenuation-level controller synthesis for coupled linear
subsystems polled over a round-robin link, with closed-loop validation.

Modules
-------
model      system data structures, builtin benchmarks, validation, JSON I/O
protocol   round-robin polling schedule and held-sample bookkeeping
affine     matrix-valued affine expressions (constraint plumbing)
lmi        decision-variable layout and semidefinite constraint assembly
sdp        conic solve and the gain-level optimization drivers
simulate   hybrid closed-loop integration and empirical metrics
oracles    quadrature / Monte-Carlo verification of the matrix inequalities
cli        command-line front end (``rrlmi``)
"""

__version__ = "0.1.0"
