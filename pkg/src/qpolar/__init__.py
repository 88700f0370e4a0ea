"""q-ary polar codes over Z_q, q = 2^r, with the H2 kernel.

Modules: ``channel`` (DMCs and Bhattacharyya statistics), ``polarize``
(transforms, synthesis, diagnostics), ``code`` (construction and encoding),
``decoder`` (successive cancellation), ``sim`` (Monte Carlo), ``cli``.
"""

__version__ = "0.1.0"
