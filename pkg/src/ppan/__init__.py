"""Adversarially trained privacy mechanisms with closed-form reference tradeoffs."""
from .autodiff import ContractError, DimensionError, DomainError, Tensor, no_grad
from .datagen import Dataset, JointModel, Observation, sample
from .estimators import TradeoffPoint, exact_discrete_mi, gaussian_mi_estimate
from .losses import DistortionFn, Lagrangian, Penalty
from .nets import AdversaryNet, CategoricalMechanism, UniversalMechanism
from .trainer import TrainConfig, TrainingDivergedError, sweep, train

__version__ = "0.1.0"
