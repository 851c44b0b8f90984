"""Neural contextual bandits with NTK-based confidence sets.

Modules: ``activation`` (sigma_s and dual activations), ``network`` (the
sigma_s MLP, gradients, training), ``ntk`` (analytic kernel, KRR),
``design`` (incremental posterior variance), ``bandit_env``, ``algorithms``,
``verify``, ``experiment`` and ``cli``.
"""

__version__ = "0.1.0"
