"""Language-free pseudo-caption generation and text-conditioned training
against a frozen toy generator, with Fréchet-distance and R-precision
evaluation. Deterministic and offline by default via the reference
embedding provider; a sidecar service can supply real pretrained
embeddings for caption generation and evaluation.
"""

from .augment import Background, BackgroundParams, checkerboard, composite, \
    composite_pair, fourier_texture, gaussian_background, sample_background
from .captions import Caption, CaptionDataset, CaptionGenConfig, build_candidates, \
    generate_pseudo_captions, load_captions, parse_caption, rank_and_select, \
    render_caption, retrieve_words, save_captions
from .config import RunConfig, load_config
from .dataset import CameraPose, DatasetManifest, ManifestRecord, PairSampler, \
    RenderedImage, assign_splits, load_manifest, sample_training_pair, save_manifest
from .embedding import EmbeddingCache, ProviderDescriptor, ReferenceProvider, \
    ServiceProvider, cache_load, cache_save, cosine, make_provider
from .errors import EmptyDatasetError, FormatError, InvalidConfigError, \
    InvalidInputError, InvalidVocabularyError, NonFiniteLossError, PipelineError, \
    ProviderUnavailableError
from .fixture import FixtureInfo, make_fixture
from .metrics import FeatureSet, embedding_features, frechet_distance, r_precision, \
    random_caption_pool, silhouette_features
from .model import GeneratorConfig, LatentCode, MappingConfig, MappingNetwork, \
    ToyGenerator, generate, init_mapping, interpolate, load_checkpoint, map_latent, \
    save_checkpoint
from .train import GradCheckReport, LossReport, TrainConfig, TrainState, grad_check, \
    loss_clip, loss_img, train, train_step
from .vocab import Vocabulary, build_adjectives, load_vocabulary, save_vocabulary

__version__ = "0.1.0"
