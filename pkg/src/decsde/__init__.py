"""Spelling-aware target embeddings for multilingual NMT into low-resource languages."""

from .chargrams import NGramVocab, bon_matrix, bon_vector, build_ngram_vocab, extract_ngrams
from .embedding import (
    DecSDEEmbedder,
    DecSDEParams,
    EmbeddingTable,
    EmbedMode,
    LanguageId,
    LookupEmbedder,
    StaleTableError,
    char_aware_embedding,
    lang_transform,
    latent_semantic,
    lookup_embed,
    tied_logits,
)
from .nmt import Batch, ModelConfig, Transformer, make_batch
from .segmenter import BPESegmenter, MergeTable, SubwordVocab, WordSegmenter, build_word_vocab, train_bpe
from .trainer import LangCorpus, TrainConfig, Trainer, adam_step, label_smoothed_nll, lr_schedule

__version__ = "0.1.0"
