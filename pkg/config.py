"""
Configuration settings for the EgoLeak toolkit.

This module handles all toolkit configuration including:
- Logging verbosity and worker counts
- Frame subsampling defaults
- Contrastive training and optimizer defaults
- Attack, masking and report settings

Author: EgoLeak Team
Version: 1.0.0
"""

import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

class Config:
    """
    Toolkit configuration class.

    This class centralizes all configuration settings for EgoLeak.
    It loads settings from environment variables and provides default values.
    """

    # =============================================================================
    # Runtime Configuration
    # =============================================================================

    LOG_LEVEL = os.getenv("EGOLEAK_LOG_LEVEL", "INFO").upper()

    # Threads used to rank queries concurrently; output never depends on it
    WORKERS = max(1, int(os.getenv("EGOLEAK_WORKERS", "1")))

    # Reproducible-builds convention: pins report timestamps when set
    SOURCE_DATE_EPOCH = os.getenv("SOURCE_DATE_EPOCH")

    # =============================================================================
    # Toolkit Metadata
    # =============================================================================

    APP_TITLE = "EgoLeak - Egocentric Privacy Leakage Toolkit"
    APP_DESCRIPTION = "Quantify camera-wearer privacy leakage from egocentric video embeddings"
    APP_VERSION = "1.0.0"

    # =============================================================================
    # Data Configuration
    # =============================================================================

    # Frames kept per clip when clips carry more (uniform subsampling)
    DEFAULT_FRAMES = int(os.getenv("EGOLEAK_FRAMES", "8"))

    # =============================================================================
    # Embedding Training Configuration
    # =============================================================================

    TEMPERATURE = 0.07
    BATCH_SIZE = 8
    LEARNING_RATE = 1e-5
    CACHE_CAPACITY = 4096
    WEIGHT_DECAY = 0.01
    ADAM_BETAS = (0.9, 0.999)
    ADAM_EPS = 1e-8
    LOG_EVERY = 100

    # =============================================================================
    # Attack Configuration
    # =============================================================================

    RAA_TOP_M = 3
    RAA_AGGREGATOR = "soft"
    RAA_WEIGHT_SCHEME = "uniform"
    CLASSIFIER_BATCH_SIZE = 32
    CLASSIFIER_LEARNING_RATE = 0.05
    CLASSIFIER_STEPS = 300
    ZERO_SHOT_TEMPERATURE = 0.1

    # =============================================================================
    # Explanation Configuration
    # =============================================================================

    MASK_STEP_SIZE = 0.1
    MASK_STEPS_PER_ROUND = 20

    # =============================================================================
    # Report Configuration
    # =============================================================================

    METRIC_DECIMALS = 4
    DEFAULT_HIT_RATE_KS = (1, 5)
