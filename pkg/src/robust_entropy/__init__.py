"""Solvers for robust-classification / privacy-utility games on finite alphabets."""

from robust_entropy.core import (
    Channel,
    DecisionRule,
    EnumerationTooLargeError,
    GroundCost,
    InfeasibleError,
    JointDistribution,
    NotConvergedError,
    NumericalDegeneracyError,
    RobustEntropyError,
    ValidationError,
    ZeroMassPolicy,
    conditional_entropy,
    cross_entropy_loss,
    expected_distortion,
    marginal_x,
    marginal_y,
    mutual_information_yz,
    posterior,
    push_forward,
)

__version__ = "0.1.0"
