"""Summary-augmented BM25 retrieval personalization for the LaMP tasks."""

from .tasks import TaskKind
from .store import ProfileItem, TaskInstance, UserProfile, load_dataset, open_store, persist_store, validate_profile
from .retrieval import RetrievalConfig, ScoredItem, bm25_score, build_index, generate_query, retrieve_top_k, tokenize
from .prompts import ConstructedPrompt, PromptPolicy, build_prompt, count_tokens, fit_to_budget, render_item
from .summarizer import (BackendDescriptor, SummaryCache, SummaryPromptTemplate, UserSummary,
                         build_summary_request, generate_summary, validate_template)
from .client import ModelEndpoint, Prediction, batch_predict, predict

__version__ = "0.1.0"
