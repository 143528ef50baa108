"""Entropy-regularised data-free replay for few-shot class-incremental learning, on numpy."""
from .autodiff import ParameterSet, Tensor, backward, parameter
from .datasets import (ProtocolSpec, SessionDataset, ToyConfig, gen_pattern_set, gen_toy_gaussians, load_dataset,
                       make_pattern_protocol, make_toy_protocol, save_dataset, split_sessions)
from .errors import (ContractViolation, DatasetFormatError, GeneratorDivergenceError, NumericOverflowError,
                     StaleGraphError)
from .metrics import (SessionReport, base_accuracy, cumulative_accuracy, export_report, final_improvement,
                      load_report, per_class_entropy, replay_label_histogram)
from .models import AuxiliaryModel, ClassifierModel, GeneratorModel, clone_model, expand_head
from .optim import SGD, Adam, lr_schedule
from .replay import GenTrainConfig, ReplayBatch, aux_loss, gen_loss, sample_replay, shannon_entropy, train_generator
from .session import (ABLATION_ARMS, Ablation, ProtocolConfig, SessionRun, base_train, incremental_step,
                      merge_dataset, run_protocol)

__version__ = "0.1.0"
