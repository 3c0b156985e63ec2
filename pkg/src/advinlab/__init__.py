"""Desk-scale data-poisoning laboratory.

Crafts training-set perturbations (inducing noise, error-minimizing noise,
adversarial-example noise), trains small convolutional victims standardly
or adversarially, and measures the damage.
"""

__version__ = "0.1.0"
