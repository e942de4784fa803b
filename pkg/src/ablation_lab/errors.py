"""Exception types shared across the package.

Every error carries a machine-readable ``kind`` (its class name) and a
``context`` dict so the CLI can emit structured error JSON.
"""

from __future__ import annotations


class AblationLabError(Exception):
    """Base class for all package errors."""

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.message = message
        self.context = context

    @property
    def kind(self) -> str:
        return type(self).__name__

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "message": self.message, "context": self.context}


class MalformedLine(AblationLabError):
    def __init__(self, line_no: int, reason: str = ""):
        msg = f"malformed label line {line_no}" + (f": {reason}" if reason else "")
        super().__init__(msg, line_no=line_no, reason=reason)
        self.line_no = line_no


class UnknownAction(AblationLabError):
    def __init__(self, token: str, line_no: int | None = None):
        super().__init__(f"unknown action token {token!r}", token=token, line_no=line_no)
        self.token = token


class MissingFrame(AblationLabError):
    def __init__(self, frame_id: str):
        super().__init__(f"no image file for frame {frame_id!r}", frame_id=frame_id)
        self.frame_id = frame_id


class StoreExists(AblationLabError):
    def __init__(self, path: str):
        super().__init__(f"output already exists: {path} (use --force to overwrite)",
                         path=str(path))


class CorruptStore(AblationLabError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"store at {path} failed validation: {reason}",
                         path=str(path), reason=reason)


class EmptyStore(AblationLabError):
    def __init__(self, reason: str = "no states survived filtering"):
        super().__init__(reason)


class InvalidConfig(AblationLabError):
    pass


class NonPositivePPD(AblationLabError):
    def __init__(self, value: float):
        super().__init__(f"pixels_per_degree must be > 0, got {value}", value=value)


class NonPositiveSigma(AblationLabError):
    def __init__(self, value: float):
        super().__init__(f"sigma_px must be > 0, got {value}", value=value)


class NonPositiveRadius(AblationLabError):
    def __init__(self, value: float):
        super().__init__(f"radius_px must be > 0, got {value}", value=value)


class InvalidWindow(AblationLabError):
    def __init__(self, index: int, reason: str):
        super().__init__(f"state {index} has no valid temporal window: {reason}",
                         index=index, reason=reason)


class NoValidStates(AblationLabError):
    def __init__(self, reason: str = "no states are valid for this configuration"):
        super().__init__(reason)


class ShapeMismatch(AblationLabError):
    def __init__(self, what: str, expected, got):
        super().__init__(f"{what}: expected {expected}, got {got}",
                         what=what, expected=str(expected), got=str(got))


class NonFiniteLoss(AblationLabError):
    def __init__(self, step: int, value: float):
        super().__init__(f"loss became non-finite at step {step} ({value})",
                         step=step, value=str(value))
        self.step = step


class MissingModel(AblationLabError):
    def __init__(self, config_id: str):
        super().__init__(f"no trained model for configuration {config_id}",
                         config_id=config_id)


class TooFewPoints(AblationLabError):
    def __init__(self, n: int, k: int):
        super().__init__(f"cannot fit {k} clusters on {n} points", n=n, k=k)


class SingleCluster(AblationLabError):
    def __init__(self):
        super().__init__("silhouette requires at least 2 clusters in the subsample")


class PerplexityTooLarge(AblationLabError):
    def __init__(self, perplexity: float, n: int):
        super().__init__(
            f"perplexity {perplexity} too large for {n} points (need perplexity <= (n-1)/3)",
            perplexity=perplexity, n=n)


class DegenerateDenominator(AblationLabError):
    def __init__(self, row: str, col: str):
        super().__init__(
            f"every game has non-positive margin over the common-choice baseline "
            f"for entry ({row},{col})", row=row, col=col)


class InvalidArity(AblationLabError):
    def __init__(self, arity: int):
        super().__init__(f"action_arity must be in [2,18], got {arity}", arity=arity)
