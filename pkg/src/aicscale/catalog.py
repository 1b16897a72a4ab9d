"""Dataset model: source images, codec recipes, stimuli, and bitrate matching.

The study manifest is a single JSON file describing sources, encoder recipes
and the encoded stimuli. Paths inside the manifest are relative to the
manifest's directory. ``match_bitrate`` finds the integer encoder quality
setting whose output bitrate is closest to a target, by binary search over
an external encoder command.
"""

from __future__ import annotations

import json
import math
import re
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

_ID_RE = re.compile(r"^[A-Za-z0-9_-]+$")

QUALITY_DIRECTIONS = ("higher_is_better", "lower_is_better")


class ManifestError(ValueError):
    """A study manifest failed validation."""


class EncoderError(RuntimeError):
    """An external encoder invocation failed."""


def _check_id(value: str, what: str) -> str:
    if not isinstance(value, str) or not _ID_RE.match(value):
        raise ManifestError(
            f"{what} id {value!r} must be a short string of [A-Za-z0-9_-]"
        )
    return value


@dataclass(frozen=True)
class SourceImage:
    id: str
    width: int
    height: int
    color_space_tag: str = "Rec2100PQ"
    file_path: str = ""

    def __post_init__(self):
        _check_id(self.id, "source")
        if self.width <= 0 or self.height <= 0:
            raise ManifestError(f"source {self.id!r}: width and height must be > 0")

    @property
    def pixels(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class BitrateRule:
    """Affine adjustment applied to target bitrates before matching.

    ``offset_bpp`` may be a single value or a per-source map; sources absent
    from the map get offset 0.
    """

    scale: float = 1.0
    offset_bpp: float | dict[str, float] = 0.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ManifestError(f"bitrate_rule scale must be > 0, got {self.scale}")

    def offset_for(self, source_id: str) -> float:
        if isinstance(self.offset_bpp, dict):
            return float(self.offset_bpp.get(source_id, 0.0))
        return float(self.offset_bpp)

    def apply(self, target_bpp: float, source_id: str) -> float:
        return self.scale * target_bpp + self.offset_for(source_id)


@dataclass(frozen=True)
class CodecRecipe:
    codec_id: str
    encode_command_template: str
    quality_range: tuple[int, int]
    quality_direction: str = "higher_is_better"
    bitrate_rule: BitrateRule | None = None

    def __post_init__(self):
        _check_id(self.codec_id, "codec")
        q_min, q_max = self.quality_range
        if q_min >= q_max:
            raise ManifestError(
                f"codec {self.codec_id!r}: quality_range must satisfy q_min < q_max"
            )
        if self.quality_direction not in QUALITY_DIRECTIONS:
            raise ManifestError(
                f"codec {self.codec_id!r}: quality_direction must be one of "
                f"{QUALITY_DIRECTIONS}"
            )

    def adjusted_target(self, target_bpp: float, source_id: str) -> float:
        if self.bitrate_rule is None:
            return target_bpp
        return self.bitrate_rule.apply(target_bpp, source_id)


@dataclass(frozen=True)
class Stimulus:
    source_id: str
    codec_id: str
    level: int
    target_bpp: float
    actual_bpp: float
    quality_setting: int
    file_path: str = ""

    def __post_init__(self):
        if self.level < 1:
            raise ManifestError(
                f"stimulus ({self.source_id}, {self.codec_id}): level must be >= 1"
            )
        if self.actual_bpp <= 0:
            raise ManifestError(
                f"stimulus ({self.source_id}, {self.codec_id}, level {self.level}): "
                "actual_bpp must be > 0"
            )

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.source_id, self.codec_id, self.level)


@dataclass
class StudyManifest:
    sources: list[SourceImage]
    codecs: list[CodecRecipe]
    stimuli: list[Stimulus]
    levels_per_codec: int = 5
    responses_per_triplet_target: int = 24
    base_dir: Path = field(default_factory=Path, compare=False)

    def __post_init__(self):
        self._source_index = {s.id: s for s in self.sources}
        self._codec_index = {c.codec_id: c for c in self.codecs}
        self._stimulus_index = {s.key: s for s in self.stimuli}
        self.validate()

    # lookups -------------------------------------------------------------
    def source(self, source_id: str) -> SourceImage:
        return self._source_index[source_id]

    def codec(self, codec_id: str) -> CodecRecipe:
        return self._codec_index[codec_id]

    def stimulus(self, source_id: str, codec_id: str, level: int) -> Stimulus:
        return self._stimulus_index[(source_id, codec_id, level)]

    def ladder(self, source_id: str, codec_id: str) -> list[Stimulus]:
        """Stimuli of one (source, codec) pair, ordered by level."""
        rungs = [s for s in self.stimuli
                 if s.source_id == source_id and s.codec_id == codec_id]
        return sorted(rungs, key=lambda s: s.level)

    @property
    def source_ids(self) -> list[str]:
        return [s.id for s in self.sources]

    @property
    def codec_ids(self) -> list[str]:
        return [c.codec_id for c in self.codecs]

    def median_bitrate(self, source_id: str) -> float:
        import statistics

        rates = [s.actual_bpp for s in self.stimuli if s.source_id == source_id]
        if not rates:
            raise ManifestError(f"no stimuli for source {source_id!r}")
        return statistics.median(rates)

    # validation ----------------------------------------------------------
    def validate(self) -> None:
        if len(self._source_index) != len(self.sources):
            raise ManifestError("duplicate source ids in manifest")
        if len(self._codec_index) != len(self.codecs):
            raise ManifestError("duplicate codec ids in manifest")
        if self.levels_per_codec < 1:
            raise ManifestError("levels_per_codec must be >= 1")

        for stim in self.stimuli:
            if stim.source_id not in self._source_index:
                raise ManifestError(
                    f"stimulus ({stim.source_id}, {stim.codec_id}, level {stim.level}) "
                    f"references unknown source {stim.source_id!r}"
                )
            if stim.codec_id not in self._codec_index:
                raise ManifestError(
                    f"stimulus ({stim.source_id}, {stim.codec_id}, level {stim.level}) "
                    f"references unknown codec {stim.codec_id!r}"
                )
        if len(self._stimulus_index) != len(self.stimuli):
            raise ManifestError("duplicate (source, codec, level) stimulus entries")

        for src in self.sources:
            for codec in self.codecs:
                rungs = self.ladder(src.id, codec.codec_id)
                if len(rungs) != self.levels_per_codec:
                    raise ManifestError(
                        f"(source {src.id!r}, codec {codec.codec_id!r}) has "
                        f"{len(rungs)} stimuli, expected {self.levels_per_codec}"
                    )
                if [s.level for s in rungs] != list(range(1, self.levels_per_codec + 1)):
                    raise ManifestError(
                        f"(source {src.id!r}, codec {codec.codec_id!r}) levels must "
                        f"be exactly 1..{self.levels_per_codec}"
                    )
                for lower, higher in zip(rungs, rungs[1:]):
                    if higher.actual_bpp >= lower.actual_bpp:
                        raise ManifestError(
                            f"(source {src.id!r}, codec {codec.codec_id!r}): "
                            f"actual_bpp must strictly decrease with level, but "
                            f"level {higher.level} ({higher.actual_bpp} bpp) >= "
                            f"level {lower.level} ({lower.actual_bpp} bpp)"
                        )


# serialization ------------------------------------------------------------

def _rule_to_json(rule: BitrateRule | None):
    if rule is None:
        return None
    return {"scale": rule.scale, "offset_bpp": rule.offset_bpp}


def _rule_from_json(obj) -> BitrateRule | None:
    if obj is None:
        return None
    return BitrateRule(scale=obj.get("scale", 1.0), offset_bpp=obj.get("offset_bpp", 0.0))


def manifest_to_json(manifest: StudyManifest) -> dict:
    return {
        "levels_per_codec": manifest.levels_per_codec,
        "responses_per_triplet_target": manifest.responses_per_triplet_target,
        "sources": [
            {
                "id": s.id,
                "width": s.width,
                "height": s.height,
                "color_space_tag": s.color_space_tag,
                "file_path": s.file_path,
            }
            for s in manifest.sources
        ],
        "codecs": [
            {
                "codec_id": c.codec_id,
                "encode_command_template": c.encode_command_template,
                "quality_range": list(c.quality_range),
                "quality_direction": c.quality_direction,
                "bitrate_rule": _rule_to_json(c.bitrate_rule),
            }
            for c in manifest.codecs
        ],
        "stimuli": [
            {
                "source_id": s.source_id,
                "codec_id": s.codec_id,
                "level": s.level,
                "target_bpp": s.target_bpp,
                "actual_bpp": s.actual_bpp,
                "quality_setting": s.quality_setting,
                "file_path": s.file_path,
            }
            for s in manifest.stimuli
        ],
    }


def manifest_from_json(obj: dict, base_dir: Path | str = ".") -> StudyManifest:
    try:
        sources = [SourceImage(**item) for item in obj.get("sources", [])]
        codecs = [
            CodecRecipe(
                codec_id=item["codec_id"],
                encode_command_template=item["encode_command_template"],
                quality_range=tuple(item["quality_range"]),
                quality_direction=item.get("quality_direction", "higher_is_better"),
                bitrate_rule=_rule_from_json(item.get("bitrate_rule")),
            )
            for item in obj.get("codecs", [])
        ]
        stimuli = [Stimulus(**item) for item in obj.get("stimuli", [])]
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"malformed manifest entry: {exc}") from exc
    return StudyManifest(
        sources=sources,
        codecs=codecs,
        stimuli=stimuli,
        levels_per_codec=obj.get("levels_per_codec", 5),
        responses_per_triplet_target=obj.get("responses_per_triplet_target", 24),
        base_dir=Path(base_dir),
    )


def load_manifest(path: str | Path) -> StudyManifest:
    """Load and validate a study manifest from a JSON file."""
    path = Path(path)
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"cannot parse manifest {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ManifestError(f"manifest {path} must be a JSON object")
    return manifest_from_json(obj, base_dir=path.parent)


def save_manifest(manifest: StudyManifest, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest_to_json(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")


# bitrate matching ----------------------------------------------------------

@dataclass
class MatchResult:
    quality_setting: int
    actual_bpp: float
    adjusted_target_bpp: float
    relative_deviation: float  # signed: (actual - target) / target
    target_unreachable: bool
    evaluations: int


class CommandEncoder:
    """Encode-and-measure callable built from a recipe's command template.

    The template must contain ``{quality}``, ``{input}`` and ``{output}``
    placeholders. The returned bitrate is measured from the output file size.
    """

    def __init__(self, recipe: CodecRecipe, source: SourceImage,
                 workdir: str | Path, input_path: str | Path | None = None):
        self.recipe = recipe
        self.source = source
        self.workdir = Path(workdir)
        self.input_path = Path(input_path) if input_path else Path(source.file_path)

    def __call__(self, quality: int) -> float:
        self.workdir.mkdir(parents=True, exist_ok=True)
        out = self.workdir / f"{self.source.id}_{self.recipe.codec_id}_q{quality}.bin"
        cmd = self.recipe.encode_command_template.format(
            quality=quality, input=str(self.input_path), output=str(out)
        )
        try:
            subprocess.run(shlex.split(cmd), check=True, capture_output=True)
        except (subprocess.CalledProcessError, FileNotFoundError) as exc:
            raise EncoderError(
                f"encoder command failed for codec {self.recipe.codec_id!r} "
                f"at quality {quality}: {exc}"
            ) from exc
        if not out.exists():
            raise EncoderError(f"encoder produced no output file {out}")
        return out.stat().st_size * 8 / self.source.pixels


def match_bitrate(
    recipe: CodecRecipe,
    source: SourceImage,
    target_bpp: float,
    tolerance: float | None = None,
    encode: Callable[[int], float] | None = None,
    workdir: str | Path | None = None,
) -> MatchResult:
    """Find the quality setting whose encoded bitrate is closest to the target.

    The target is first adjusted by the recipe's bitrate rule. ``tolerance``
    (a relative fraction) enables early stopping; by default the search runs
    until the quality interval collapses. At most
    ceil(log2(q_max - q_min)) + 2 encoder evaluations are made. When the bpp
    curve is not monotone in quality, the closest evaluated setting is kept.
    """
    if target_bpp <= 0:
        raise ValueError("target_bpp must be > 0")
    if tolerance is not None and tolerance <= 0:
        raise ValueError("tolerance must be > 0")
    if encode is None:
        if workdir is None:
            raise ValueError("workdir is required when using the command encoder")
        encode = CommandEncoder(recipe, source, workdir)

    target = recipe.adjusted_target(target_bpp, source.id)
    q_min, q_max = recipe.quality_range
    increasing = recipe.quality_direction == "higher_is_better"

    cache: dict[int, float] = {}

    def bpp(q: int) -> float:
        if q not in cache:
            cache[q] = encode(q)
        return cache[q]

    def best() -> tuple[int, float]:
        q = min(cache, key=lambda q: (abs(cache[q] - target), q))
        return q, cache[q]

    def within_tolerance() -> bool:
        if tolerance is None or not cache:
            return False
        _, b = best()
        return abs(b - target) <= tolerance * target

    lo, hi = q_min, q_max
    while lo < hi:
        mid = (lo + hi) // 2
        b = bpp(mid)
        if within_tolerance():
            lo = hi = mid
            break
        if (b < target) == increasing:
            lo = mid + 1
        else:
            hi = mid
    if lo not in cache and not within_tolerance():
        bpp(lo)

    q_best, bpp_best = best()
    deviation = (bpp_best - target) / target
    tol = tolerance if tolerance is not None else 1e-9
    unreachable = q_best in (q_min, q_max) and abs(deviation) > tol
    return MatchResult(
        quality_setting=q_best,
        actual_bpp=bpp_best,
        adjusted_target_bpp=target,
        relative_deviation=deviation,
        target_unreachable=unreachable,
        evaluations=len(cache),
    )


def max_evaluations(recipe: CodecRecipe) -> int:
    """Upper bound on encoder evaluations used by ``match_bitrate``."""
    q_min, q_max = recipe.quality_range
    return math.ceil(math.log2(q_max - q_min)) + 2
