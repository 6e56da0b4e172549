"""
Constants for the EgoLeak toolkit.

This module contains all toolkit constants including:
- Clip views, splits and demographic label sets
- Retrieval tasks and capability tiers
- Head architectures, pooling and training modes
- Binary file layouts and bundle file names

Author: EgoLeak Team
Version: 1.0.0
"""

from enum import Enum
from typing import Dict, Tuple

# =============================================================================
# Clip Metadata
# =============================================================================

class View(str, Enum):
    EGO = "Ego"
    EXO = "Exo"

class Split(str, Enum):
    TRAIN = "Train"
    TEST = "Test"

class Attribute(str, Enum):
    GENDER = "gender"
    RACE = "race"
    AGE = "age"

# Class order defines class indices for every classifier and probability vector
ATTRIBUTE_CLASSES: Dict[Attribute, Tuple[str, ...]] = {
    Attribute.GENDER: ("Female", "Male"),
    Attribute.RACE: ("Asian", "Black", "White"),
    Attribute.AGE: ("Young", "MiddleAged", "Senior"),
}

# =============================================================================
# Retrieval and Attacks
# =============================================================================

class RetrievalTask(str, Enum):
    EGO_TO_EGO_IDENTITY = "ego2ego"
    EGO_TO_EXO_IDENTITY = "ego2exo"
    SCENE = "scene"
    MOMENT = "moment"

class Capability(str, Enum):
    ZERO_SHOT = "1"
    FINE_TUNED = "2"
    RETRIEVAL_AUGMENTED = "3"
    IDENTITY_LINKING = "4"

class Aggregator(str, Enum):
    HARD_VOTE = "hard"
    SOFT_VOTE = "soft"

class WeightScheme(str, Enum):
    UNIFORM = "uniform"
    FIXED_HALF = "half"

# =============================================================================
# Heads and Training
# =============================================================================

class Architecture(str, Enum):
    LINEAR = "Linear"
    ONE_HIDDEN_MLP = "OneHiddenMLP"

class Pooling(str, Enum):
    MEAN = "Mean"
    ATTENTION = "Attention"

class PositiveMode(str, Enum):
    INDIVIDUAL = "individual"
    SITUATIONAL = "situational"

class DenominatorMode(str, Enum):
    STANDARD = "standard"
    LITERAL = "literal"

# =============================================================================
# File Formats
# =============================================================================

EMBEDDING_MAGIC = b"EGOPRIV1"
CHECKPOINT_MAGIC = b"EGOHEAD1"

MANIFEST_FILE = "manifest.json"
EGO_EMBEDDINGS_FILE = "ego.emb"
EXO_EMBEDDINGS_FILE = "exo.emb"
PROVENANCE_FILE = "provenance.json"
LOCK_FILE = ".lock"

# Tolerances
UNIT_NORM_TOLERANCE = 1e-5
PROBABILITY_SUM_TOLERANCE = 1e-9
