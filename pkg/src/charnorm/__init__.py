"""Character-level text normalization with word-level subword features."""

from .corpus import AnnotatedSentence, Edit, Vocabulary, apply_gold_edits, build_vocab, parse_m2
from .embeddings import SubwordEmbeddings, WordFeatureProvider, train_skipgram
from .inference import Corrector, beam_search, clamp_repetitions
from .m2scorer import ScoreReport, score_corpus
from .model import ModelConfig, Seq2Seq, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, Trainer

__version__ = "0.1.0"
