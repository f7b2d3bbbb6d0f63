"""Synthetic behaviour logs with planted category structure.

Each user prefers one category; every session draws items mostly from that
category, with an occasional off-category click. Item ids are ``i<c>_<j>``
and category ids ``c<c>``.
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass
from typing import IO

import numpy as np

from mvgraph.ingest import Event


@dataclass(frozen=True)
class PlantedCorpus:
    n_categories: int = 4
    items_per_category: int = 25
    n_users: int = 200
    sessions_per_user: int = 4
    session_len: int = 6
    off_category: float = 0.1
    popularity_skew: float = 0.0  # Zipf exponent for item popularity within a category
    session_gap: int = 2 * 3600
    click_gap: int = 30

    def item_id(self, c: int, j: int) -> str:
        return f"i{c}_{j}"

    def category_of(self, item: str) -> str:
        return "c" + item[1:].split("_")[0]

    @property
    def session_period(self) -> int:
        return self.session_len * self.click_gap + self.session_gap

    def holdout_cutoff(self) -> int:
        """Timestamp that puts exactly each user's last session on the test side."""
        return (self.sessions_per_user - 1) * self.session_period

    def generate(self, seed: int = 0) -> list[Event]:
        rng = np.random.default_rng(seed)
        ranks = np.arange(1, self.items_per_category + 1, dtype=np.float64)
        pop = ranks ** (-self.popularity_skew)
        pop /= pop.sum()
        events: list[Event] = []
        for u in range(self.n_users):
            home = int(rng.integers(self.n_categories))
            ts = int(rng.integers(0, self.session_gap // 2))
            for _ in range(self.sessions_per_user):
                for _ in range(self.session_len):
                    c = home
                    if rng.random() < self.off_category:
                        c = int(rng.integers(self.n_categories))
                    j = int(rng.choice(self.items_per_category, p=pop))
                    item = self.item_id(c, j)
                    events.append(Event(f"u{u}", item, ts, category_id=f"c{c}", dwell=5000))
                    ts += self.click_gap
                ts += self.session_gap
        return events


def write_log(fh: IO[str], events: Iterable[Event], with_shop: bool = False) -> None:
    """Write events in the default tab-separated input layout."""
    cols = ["user_id", "item_id", "category_id"] + (["shop_id"] if with_shop else []) + ["timestamp", "dwell_ms"]
    fh.write("\t".join(cols) + "\n")
    for e in events:
        row = [e.user_id, e.item_id, e.category_id or ""]
        if with_shop:
            row.append(e.shop_id or "")
        row += [str(e.timestamp), "" if e.dwell is None else str(e.dwell)]
        fh.write("\t".join(row) + "\n")
