from .intersection import IntersectionConfig, IntersectionLoader
from .controller import RingBarrierController
from .traffic import TrafficModel
from .signal_simulator import SignalSimulator
from .data_handler import DataHandler, EncodedDay
from .preprocessor import Preprocessor, SchemaManifest
from .labeling import compute_targets
from .sequencer import Sequencer, SequenceDataset
from .lstm_network import LstmNetwork
from .losses import LossKind, compute_loss
from .optimizer import PlateauScheduler, adam_step
from .trainer import TrainConfig, Trainer, grid_search
from .evaluation import Evaluator, HorizonReport, compare_models
from .experiment import Experiment, ExperimentConfig, load_experiment_config



__all__ = ['IntersectionConfig',
           'IntersectionLoader',
           'RingBarrierController',
           'TrafficModel',
           'SignalSimulator',
           'DataHandler',
           'EncodedDay',
           'Preprocessor',
           'SchemaManifest',
           'compute_targets',
           'Sequencer',
           'SequenceDataset',
           'LstmNetwork',
           'LossKind',
           'compute_loss',
           'PlateauScheduler',
           'adam_step',
           'TrainConfig',
           'Trainer',
           'grid_search',
           'Evaluator',
           'HorizonReport',
           'compare_models',
           'Experiment',
           'ExperimentConfig',
           'load_experiment_config'
           ]
