"""Scikit-learn-style front door for the whole pipeline.

``SelectiveRestorer`` treats a checkpoint pair as the thing being fitted:
``fit(adapted, base)`` scores every aligned tensor and freezes a merge plan;
``transform(adapted)`` applies it and returns the merged checkpoint. Because
the class follows the BaseEstimator parameter contract, ``clone`` /
``set_params`` work, so sweeping configurations composes with the usual
scikit-learn machinery.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .archmap import ArchProfile
from .checkpoint_io import Checkpoint
from .errors import ValidationError
from .merger import apply_plan
from .metrics import MetricConfig
from .planner import POLICY_PRESETS, Policy, build_plan
from .reports import analyze_checkpoints


class SelectiveRestorer(TransformerMixin, BaseEstimator):
    """Selectively restore a domain-adapted checkpoint toward its base.

    Parameters mirror the CLI flags: metric knobs (alpha, beta, k_top,
    snr_source), the restoration policy (a preset name or 'custom' with
    explicit fractions), the interpolation coefficient t, the selection mode,
    and the seed used by random-mode selection.

    Examples
    --------
    >>> restorer = SelectiveRestorer(policy="conservative", t=0.5)
    >>> merged = restorer.fit(adapted, base).transform(adapted)
    """

    def __init__(
        self,
        policy: str = "balanced",
        frac_mlp: float | None = None,
        frac_attn: float | None = None,
        t: float = 0.5,
        mode: str = "combined",
        alpha: float = 0.5,
        beta: float = 0.5,
        k_top: int = 16,
        snr_source: str = "adapted",
        relative_change_cap: float = 1e3,
        restore_end: str = "top",
        seed: int = 0,
        profile: ArchProfile | None = None,
    ):
        self.policy = policy
        self.frac_mlp = frac_mlp
        self.frac_attn = frac_attn
        self.t = t
        self.mode = mode
        self.alpha = alpha
        self.beta = beta
        self.k_top = k_top
        self.snr_source = snr_source
        self.relative_change_cap = relative_change_cap
        self.restore_end = restore_end
        self.seed = seed
        self.profile = profile

    def _metric_config(self) -> MetricConfig:
        return MetricConfig(
            k_top=self.k_top,
            alpha=self.alpha,
            beta=self.beta,
            relative_change_cap=self.relative_change_cap,
            snr_source=self.snr_source,
        )

    def _policy(self) -> Policy:
        common = dict(t=self.t, mode=self.mode, seed=self.seed, restore_end=self.restore_end)
        if self.frac_mlp is None and self.frac_attn is None:
            if self.policy == "custom":
                raise ValidationError("policy='custom' requires frac_mlp and frac_attn")
            return Policy.preset(self.policy, **common)
        if self.frac_mlp is None or self.frac_attn is None:
            raise ValidationError("set both frac_mlp and frac_attn (or neither)")
        return Policy.custom(self.frac_mlp, self.frac_attn, **common)

    def fit(self, X: Checkpoint, y: Checkpoint | None = None):
        """Score the pair and freeze the merge plan.

        X is the domain-adapted checkpoint; y is the base checkpoint the
        selected tensors are restored toward.
        """
        if y is None:
            raise ValidationError("fit needs the base checkpoint as y")
        if not isinstance(X, Checkpoint) or not isinstance(y, Checkpoint):
            raise ValidationError("fit expects Checkpoint instances")
        profile = self.profile if self.profile is not None else ArchProfile.llama()
        report, plan, scored = analyze_checkpoints(
            base=y, adapted=X, cfg=self._metric_config(), policy=self._policy(), profile=profile
        )
        self.base_ = y
        self.plan_ = plan
        self.report_ = report
        self.importance_ = report.rows
        self.scored_rows_ = scored
        return self

    def transform(self, X: Checkpoint) -> Checkpoint:
        """Apply the fitted plan to a checkpoint aligned with the fitted pair."""
        check_is_fitted(self, "plan_")
        if not isinstance(X, Checkpoint):
            raise ValidationError("transform expects a Checkpoint instance")
        return apply_plan(self.base_, X, self.plan_)

    def replan(self, frac_mlp: float | None = None, frac_attn: float | None = None, t: float | None = None):
        """Rebuild the plan from the already-computed scores (no re-scoring)."""
        check_is_fitted(self, "scored_rows_")
        self.plan_ = build_plan(self.scored_rows_, self.plan_.policy.with_config(frac_mlp, frac_attn, t))
        return self

    @staticmethod
    def available_policies() -> list[str]:
        return sorted(POLICY_PRESETS) + ["custom"]
