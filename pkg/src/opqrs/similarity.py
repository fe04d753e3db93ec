"""HTTP client for the phrase-similarity scoring service."""

from __future__ import annotations

from dataclasses import dataclass

import requests


class SimilarityServiceDownError(Exception):
    """The scoring service is unreachable or not ready."""


@dataclass(frozen=True)
class ScoreTriple:
    precision: float
    recall: float
    f1: float
    model_id: str

    def component(self, name: str) -> float:
        if name not in ("precision", "recall", "f1"):
            raise ValueError(f"unknown similarity component: {name}")
        return getattr(self, name)


class SimilarityClient:
    """Thin client over the service's /score, /score_batch and /health."""

    def __init__(self, base_url: str, timeout: float = 30.0, component: str = "f1"):
        if component not in ("precision", "recall", "f1"):
            raise ValueError(f"unknown similarity component: {component}")
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.component = component

    def _post(self, route: str, payload: dict) -> dict:
        try:
            response = requests.post(
                f"{self.base_url}{route}", json=payload, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise SimilarityServiceDownError(str(exc)) from exc
        if response.status_code == 503:
            raise SimilarityServiceDownError("service is still warming up")
        if response.status_code != 200:
            raise ValueError(f"similarity service rejected request: {response.text[:200]}")
        return response.json()

    def health(self) -> dict:
        try:
            response = requests.get(f"{self.base_url}/health", timeout=self.timeout)
        except requests.RequestException as exc:
            raise SimilarityServiceDownError(str(exc)) from exc
        if response.status_code != 200:
            raise SimilarityServiceDownError(f"health check returned {response.status_code}")
        return response.json()

    def score(self, candidate: str, reference: str) -> ScoreTriple:
        data = self._post("/score", {"candidate": candidate, "reference": reference})
        return ScoreTriple(
            precision=data["precision"], recall=data["recall"],
            f1=data["f1"], model_id=data["model_id"],
        )

    def score_batch(self, pairs) -> list[ScoreTriple]:
        data = self._post(
            "/score_batch",
            {"pairs": [{"candidate": c, "reference": r} for c, r in pairs]},
        )
        return [
            ScoreTriple(precision=d["precision"], recall=d["recall"],
                        f1=d["f1"], model_id=d["model_id"])
            for d in data["scores"]
        ]

    def similarity_fn(self):
        """(prediction, gold) -> chosen score component, for classify()."""

        def fn(prediction: str, gold: str) -> float:
            return self.score(prediction, gold).component(self.component)

        return fn
