"""Probabilistic feature embedding for 4-D light fields.

Submodules: ``lightfield`` and ``io`` (data, forward model, metrics in
``metrics``), ``autodiff`` (tensor engine, layers, Adam), ``pfe`` (gated
embedding module), ``crnet`` and ``dnnet`` (the two networks), ``training``,
``report`` and ``cli``.
"""

__version__ = "0.1.0"
