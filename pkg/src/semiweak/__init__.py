"""Learning instance-level classifiers from per-class count labels.

Bags of instances carry only a vector of per-class counts. Training fits a
network whose softmax outputs sum-pool into expected counts under a Poisson
count loss; prediction decodes expected counts into exact counts and then
matches instances to class slots with an exact assignment solver.
"""

from .assignment import InstanceLabeling, assign_labels, brute_force_assign, greedy_argmax_labels
from .core import (
    AssignmentMatrix,
    Bag,
    BagDataset,
    CountVector,
    ExpectedCounts,
    PresenceVector,
    ProbMatrix,
    ValidationError,
    rng_stream,
    validate_bag,
)
from .count_decoder import DecodeResult, brute_force_decode, greedy_decode
from .datagen import DatasetConfig, DatasetStats, generate_dataset, load_dataset, write_dataset
from .evaluation import Metrics, evaluate_bags, instance_precision, bag_precision
from .harness import Scenario, ScenarioResult, run_scenario
from .losses import (
    LossBreakdown,
    combined_loss,
    kl_proportion_loss,
    l1_regularizer,
    poisson_grad,
    poisson_loss,
    presence_bce_loss,
)
from .model import (
    DivergenceError,
    ForwardOutput,
    ModelParams,
    TrainConfig,
    TrainResult,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
