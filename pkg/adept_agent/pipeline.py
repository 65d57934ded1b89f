"""Stage runners and the resumable end-to-end pipeline.

Artifacts are line-oriented or sorted JSON so reruns with the same inputs
and seed are byte-identical. A state file records every stage's input and
output hashes; ``resume`` skips stages whose record still matches.
"""

import dataclasses
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Union

from . import __version__
from .acoustic import SignalView
from .agent import AgentConfig, Trajectory, load_prompts, run_trajectory
from .errors import AdeptError, InsufficientData, StageError
from .features import FrameParams, load_audio
from .labels import LabelSet, UtteranceRecord, corpus_stats, load_manifest, manifest_fingerprint
from .metrics import evaluate
from .policy import PolicyInterface, build_policy_factory
from .prior import PriorTable, build_prior
from .refstats import GlobalReference, build_reference
from .reward import RewardWeights, score_all

logger = logging.getLogger(__name__)

STAGES = ("labels", "refstats", "prior", "run", "score", "eval")
TRAJECTORY_FILE = "trajectories.jsonl"


def write_json(path: Union[str, Path], data: Any) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def write_jsonl(path: Union[str, Path], rows: Iterable[Dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")


def read_jsonl(path: Union[str, Path]) -> List[Dict]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def trajectory_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path / TRAJECTORY_FILE if path.is_dir() or not path.suffix else path


def load_trajectories(path: Union[str, Path]) -> List[Trajectory]:
    return [Trajectory.from_dict(row) for row in read_jsonl(trajectory_path(path))]


def load_ground_truth(path: Union[str, Path]) -> Dict[str, LabelSet]:
    """Ground-truth label sets from a manifest (.jsonl) or a labels.json artifact."""
    path = Path(path)
    if path.suffix == ".json":
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return {uid: LabelSet.from_dict(ls) for uid, ls in data["labels"].items()}
    return {r.id: r.labels for r in load_manifest(path).records}


def build_labels(manifest: Union[str, Path], out: Union[str, Path], strict: bool = False) -> Dict:
    result = load_manifest(manifest, strict=strict)
    if not result.records:
        raise InsufficientData(f"no usable records in {manifest}")
    artifact = {
        "inputs": {"manifest": manifest_fingerprint(manifest)},
        "stats": corpus_stats(result.records).to_dict(),
        "issues": [issue.to_dict() for issue in result.issues],
        "other_plurality": result.other_plurality,
        "labels": {r.id: r.labels.to_dict() for r in result.records},
    }
    write_json(out, artifact)
    return artifact


def build_prior_file(manifest: Union[str, Path], out: Union[str, Path], lam: float = 0.5,
                     eps: float = 1e-8) -> PriorTable:
    records = load_manifest(manifest).records
    if not records:
        raise InsufficientData(f"no usable records in {manifest}")
    table = build_prior(records, lam, eps, fingerprint=f"manifest:{manifest_fingerprint(manifest)}")
    table.save(out)
    return table


def build_refs_file(manifest: Union[str, Path], out: Union[str, Path], scope: str = "corpus",
                    jobs: int = 1, params: Optional[FrameParams] = None) -> GlobalReference:
    records = load_manifest(manifest).records
    ref = build_reference(records, scope, params, manifest_fingerprint(manifest), jobs=jobs)
    ref.save(out)
    return ref


def _rollouts_for(record: UtteranceRecord, factory: Callable[[], PolicyInterface],
                  base: AgentConfig, rollouts: int) -> List[Trajectory]:
    try:
        view: Optional[SignalView] = SignalView(load_audio(record.audio), base.params)
    except (AdeptError, OSError, RuntimeError):
        view = None
    return [
        run_trajectory(record, factory(), dataclasses.replace(base, rollout=k), view)
        for k in range(rollouts)
    ]


def run_rollouts(
    records: Sequence[UtteranceRecord],
    factory: Callable[[], PolicyInterface],
    base: AgentConfig,
    rollouts: int = 1,
    jobs: int = 1,
) -> List[Trajectory]:
    """K rollouts per utterance; output order is (manifest order, rollout) regardless of jobs."""
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        groups = list(pool.map(lambda r: _rollouts_for(r, factory, base, rollouts), records))
    return [traj for group in groups for traj in group]


def score_file(traj_path: Union[str, Path], gt_path: Union[str, Path], out: Union[str, Path],
               weights: Optional[RewardWeights] = None) -> List[Dict]:
    scores = score_all(load_trajectories(traj_path), load_ground_truth(gt_path), weights)
    rows = [row for group in scores for row in group.rows()]
    write_jsonl(out, rows)
    return rows


def eval_file(traj_path: Union[str, Path], gt_path: Union[str, Path], out: Union[str, Path]) -> Dict:
    report = evaluate(load_trajectories(traj_path), load_ground_truth(gt_path)).to_dict()
    report["inputs"] = {
        "trajectories": manifest_fingerprint(trajectory_path(traj_path)),
        "ground_truth": manifest_fingerprint(gt_path),
    }
    write_json(out, report)
    return report


@dataclass
class Stage:
    name: str
    inputs: Dict[str, Path]
    params: Dict[str, Any]
    outputs: List[Path]
    action: Callable[[], Any]


class Pipeline:
    """labels -> refstats -> prior -> run -> score -> eval over one RunConfig."""

    def __init__(self, config, policy_factory: Optional[Callable[[], PolicyInterface]] = None):
        self.config = config
        self.out = Path(config.out)
        self._factory = policy_factory
        self.paths = {
            "labels": self.out / "labels.json",
            "refs": self.out / "refs.json",
            "prior": self.out / "prior.json",
            "traj": self.out / "traj" / TRAJECTORY_FILE,
            "rewards": self.out / "rewards.jsonl",
            "report": self.out / "report.json",
            "state": self.out / "state.json",
        }

    def _policy_factory(self) -> Callable[[], PolicyInterface]:
        if self._factory is None:
            self._factory = build_policy_factory(
                self.config.policy,
                api_key=self.config.api_key,
                model=self.config.model,
                phase_prompts=load_prompts(),
            )
        return self._factory

    def _policy_inputs(self) -> Dict[str, Path]:
        kind, _, target = self.config.policy.partition(":")
        return {"script": Path(target)} if kind == "scripted" else {}

    def _run_stage(self) -> None:
        cfg = self.config
        records = load_manifest(cfg.manifest, strict=cfg.strict).records
        refs = GlobalReference.load(self.paths["refs"], manifest_sha256=manifest_fingerprint(cfg.reference_manifest))
        base = AgentConfig(
            prior=PriorTable.load(self.paths["prior"]),
            refs=refs,
            max_calls=cfg.max_calls,
            seed=cfg.seed,
            audio_mode=cfg.audio_mode,
        )
        trajectories = run_rollouts(records, self._policy_factory(), base, cfg.rollouts, cfg.jobs)
        aborted = sum(1 for t in trajectories if t.aborted)
        if aborted:
            logger.warning("%d of %d trajectories aborted", aborted, len(trajectories))
        self.paths["traj"].parent.mkdir(parents=True, exist_ok=True)
        write_jsonl(self.paths["traj"], (t.to_dict() for t in trajectories))

    def stages(self) -> List[Stage]:
        cfg = self.config
        ref_manifest = cfg.reference_manifest
        p = self.paths
        return [
            Stage("labels", {"manifest": cfg.manifest}, {"strict": cfg.strict}, [p["labels"]],
                  lambda: build_labels(cfg.manifest, p["labels"], cfg.strict)),
            Stage("refstats", {"manifest": ref_manifest}, {"scope": cfg.refs_scope}, [p["refs"]],
                  lambda: build_refs_file(ref_manifest, p["refs"], cfg.refs_scope, cfg.jobs)),
            Stage("prior", {"manifest": ref_manifest}, {"lam": cfg.lam, "eps": cfg.eps}, [p["prior"]],
                  lambda: build_prior_file(ref_manifest, p["prior"], cfg.lam, cfg.eps)),
            Stage(
                "run",
                {"manifest": cfg.manifest, "prior": p["prior"], "refs": p["refs"], **self._policy_inputs()},
                {
                    "policy": cfg.policy,
                    "model": cfg.model,
                    "rollouts": cfg.rollouts,
                    "seed": cfg.seed,
                    "max_calls": cfg.max_calls,
                    "audio_mode": cfg.audio_mode,
                    "version": __version__,
                },
                [p["traj"]],
                self._run_stage,
            ),
            Stage("score", {"traj": p["traj"], "labels": p["labels"]}, {"weights": cfg.weights}, [p["rewards"]],
                  lambda: score_file(p["traj"], p["labels"], p["rewards"], RewardWeights.resolve(cfg.weights))),
            Stage("eval", {"traj": p["traj"], "labels": p["labels"]}, {}, [p["report"]],
                  lambda: eval_file(p["traj"], p["labels"], p["report"])),
        ]

    def _load_state(self) -> Dict:
        if not self.paths["state"].is_file():
            return {}
        with open(self.paths["state"], "r", encoding="utf-8") as f:
            return json.load(f)

    @staticmethod
    def _hashes(paths: Mapping[str, Path]) -> Dict[str, Optional[str]]:
        return {name: manifest_fingerprint(path) if Path(path).is_file() else None for name, path in paths.items()}

    def _fresh(self, stage: Stage, entry: Optional[Dict]) -> bool:
        if not entry:
            return False
        if entry.get("inputs") != self._hashes(stage.inputs) or entry.get("params") != stage.params:
            return False
        outputs = {str(path): path for path in stage.outputs}
        return entry.get("outputs") == self._hashes(outputs) and all(path.is_file() for path in stage.outputs)

    def run(self, resume: bool = False, progress: Optional[Callable[[str, str], None]] = None) -> Dict[str, str]:
        """
        Execute every stage in order.

        Args:
            resume: Skip stages whose recorded inputs, parameters and outputs are unchanged
            progress: Callback receiving (stage, status) with status in {"running", "done", "skipped"}

        Returns:
            Mapping stage name -> "ran" or "skipped"

        Raises:
            StageError: Naming the failed stage; outputs of earlier stages are kept
            ValueError: No training split and allow_eval_prior unset
        """
        if self.config.train_manifest is None:
            if not self.config.allow_eval_prior:
                raise ValueError(
                    "no training split: pass --train-manifest, or --allow-eval-prior to build "
                    "the prior and references from the evaluation manifest"
                )
            logger.warning("Building prior and references from the evaluation manifest %s", self.config.manifest)
        self.out.mkdir(parents=True, exist_ok=True)
        state = self._load_state() if resume else {}
        outcome: Dict[str, str] = {}
        for stage in self.stages():
            if resume and self._fresh(stage, state.get(stage.name)):
                logger.info("Stage %s is fresh; skipping", stage.name)
                outcome[stage.name] = "skipped"
                if progress:
                    progress(stage.name, "skipped")
                continue
            logger.info("Stage %s starting", stage.name)
            if progress:
                progress(stage.name, "running")
            try:
                stage.action()
            except (AdeptError, OSError, ValueError, KeyError) as e:
                write_json(self.paths["state"], state)
                raise StageError(stage.name, str(e)) from e
            state[stage.name] = {
                "inputs": self._hashes(stage.inputs),
                "params": stage.params,
                "outputs": self._hashes({str(path): path for path in stage.outputs}),
            }
            write_json(self.paths["state"], state)
            logger.info("Stage %s finished", stage.name)
            outcome[stage.name] = "ran"
            if progress:
                progress(stage.name, "done")
        return outcome
