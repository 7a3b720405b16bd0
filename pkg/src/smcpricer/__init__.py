"""Sequential Monte Carlo pricing of path-dependent options.

Core layers: ``diffusion`` (log-price dynamics and marginals), ``products``
(barrier options and TARNs), ``weighting`` (guiding weight sequences and
potentials), ``smc`` (the particle engine), ``pricing`` (the estimators),
``unbiasedness`` (resampling trace and verification harness), and
``experiments`` (replication plans and CSV output).  ``service`` exposes the
same operations over HTTP; ``cli`` is a thin client for both.
"""

__version__ = "0.1.0"
