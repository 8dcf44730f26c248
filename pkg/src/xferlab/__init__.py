"""Similar-domain adversarial attacks on text classifiers, and the defenses against them.

Modules: ``autodiff`` (tape-based reverse mode), ``corpus``, ``models``,
``attack`` (discrete FGSM), ``psets`` (perturbation sets), ``defenses``
(adversarial training, distillation, Learn2Weight), ``metrics``, ``synth``,
``bench`` and ``cli``.
"""
__version__ = "0.1.0"
