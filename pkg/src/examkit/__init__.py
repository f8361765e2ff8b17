"""examkit: study-material chunking, exam-driven dataset building, and
multiple-choice evaluation for chat LLMs."""

from .chunking import (
    Block,
    Chunk,
    ChunkConfig,
    chunk_document,
    chunk_primary,
    corpus_stats,
    parse_outline,
    rendered_text,
    split_oversized,
)
from .evaluate import (
    ExamReport,
    ExtractedAnswer,
    emit_report,
    extract_answer,
    render_exam_prompt,
    run_eval,
    score_exam,
)
from .exams import (
    Choice,
    ChoicePermutation,
    Exam,
    ExamQuestion,
    PassingRule,
    apply_permutation,
    load_exam,
    save_exam,
    shuffle_choices,
    validate_exam,
)
from .gateway import BackendSpec, ChatRequest, ChatResponse, LlmGateway, request_cache_key
from .prompts import PromptVariant, VARIANTS, get_variant
from .tokenizers import get_token_counter, register_token_counter

__version__ = "0.1.0"
