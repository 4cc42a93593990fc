"""Synthetic LaMP-shaped datasets for scale and load testing."""

from __future__ import annotations

import itertools
import random

from .store import ProfileItem, TaskInstance, UserProfile
from .tasks import TaskKind

_WORDS = [f"w{i:04d}" for i in range(5000)]


def synthetic_tweets(n_users: int, items_per_user: int, words_per_item: int = 20,
                     seed: int = 0) -> tuple[list[TaskInstance], dict[str, UserProfile]]:
    """Tweet-paraphrasing users with Zipf-ish vocabulary; one question per user."""
    rng = random.Random(seed)
    # heavy head so document frequencies vary like natural text
    cum = list(itertools.accumulate(1.0 / (r + 1) for r in range(len(_WORDS))))
    instances, profiles = [], {}
    for u in range(n_users):
        uid = f"u{u:05d}"
        items = tuple(
            ProfileItem(f"{uid}-{j}", {"text": " ".join(rng.choices(_WORDS, cum_weights=cum, k=words_per_item))})
            for j in range(items_per_user)
        )
        profiles[uid] = UserProfile(uid, TaskKind.TweetPara, items)
        query = " ".join(rng.choices(_WORDS, cum_weights=cum, k=words_per_item))
        instances.append(TaskInstance(f"q{u:05d}", TaskKind.TweetPara, f"Paraphrase the following tweet: {query}",
                                      uid, query))
    return instances, profiles
