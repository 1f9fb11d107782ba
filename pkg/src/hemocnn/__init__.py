"""A small numpy framework for the mononuclear/polynuclear blood-cell CNN."""
from .checkpoint import load, load_weights, save
from .data import (CLASS_NAMES, INPUT_SHAPE, ClassMapping, LabeledDataset, batches,
                   decode_image, decode_ppm, encode_ppm, load_dataset, one_hot,
                   resize_bilinear, split_stratified)
from .errors import (ConfigError, DataError, DecodeError, FormatError, HemoError,
                     NumericError, ShapeError, StateError)
from .layers import (Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2D, ReLU, Rescale,
                     Sigmoid)
from .model import (CsvMetricsSink, EpochRecord, SequentialModel, TrainConfig,
                    build_paper_model, evaluate, fit)
from .optimize import (RMSProp, RmsPropState, accuracy, bce_loss,
                       finite_difference_check, rmsprop_step)
from .tensor import Precision

__version__ = "0.1.0"
