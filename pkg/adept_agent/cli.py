"""CLI interface for the ADEPT emotion-reasoning pipeline."""

import json
import sys
from pathlib import Path

import click

from . import __version__
from .agent import AUDIO_MODES, DEFAULT_MAX_CALLS, AgentConfig, load_prompts
from .config import (
    ENV_API_KEY,
    ENV_MODEL,
    build_run_config,
    configure_logging,
    load_environment,
    read_config_file,
)
from .errors import AdeptError
from .fixtures import FixtureSpec, write_fixture
from .labels import load_manifest
from .metrics import EvalReport, format_table
from .pipeline import (
    TRAJECTORY_FILE,
    Pipeline,
    build_labels,
    build_prior_file,
    build_refs_file,
    eval_file,
    read_jsonl,
    run_rollouts,
    score_file,
    write_json,
    write_jsonl,
)
from .policy import build_policy_factory
from .prior import PriorQuery, PriorTable, query
from .refstats import GlobalReference
from .reward import PRESETS, RewardWeights

FAILURES = (AdeptError, ValueError, OSError)


def _fail(message: str, error: Exception) -> None:
    click.echo(f"❌ {message}: {error}", err=True)
    sys.exit(1)


@click.group()
@click.version_option(version=__version__)
@click.option("--log-level", default="WARNING", show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
              help="Logging level")
@click.option("-v", "--verbose", is_flag=True, help="Shortcut for --log-level INFO")
def cli(log_level, verbose):
    """ADEPT - agentic speech-emotion reasoning with auditable evidence trails."""
    load_environment()
    configure_logging(log_level, verbose)


@cli.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory")
@click.option("--n", "n", default=50, show_default=True, type=int, help="Number of utterances")
@click.option("--seed", default=0, show_default=True, type=int, help="Random seed")
@click.option("--tie-rate", default=0.18, show_default=True, type=float, help="Target tie rate")
@click.option("--speakers", default=2, show_default=True, type=int, help="Number of synthetic speakers")
@click.option("--test-fraction", default=0.0, show_default=True, type=float,
              help="Also write train.jsonl/test.jsonl with this test share")
@click.option("--no-audio", is_flag=True, help="Skip WAV synthesis (labels-only corpus)")
@click.option("--spec", "spec_file", type=click.Path(exists=True, dir_okay=False),
              help="YAML/JSON fixture spec; its keys override the flags")
def fixture(out_dir, n, seed, tie_rate, speakers, test_fraction, no_audio, spec_file):
    """Generate a deterministic synthetic corpus."""
    values = {"n": n, "seed": seed, "tie_rate": tie_rate, "speakers": speakers,
              "test_fraction": test_fraction, "audio": not no_audio}
    try:
        if spec_file:
            values.update(read_config_file(spec_file))
        spec = FixtureSpec(**values)
        click.echo(f"🔄 Writing {spec.n} synthetic utterances to {out_dir}...")
        result = write_fixture(spec, out_dir)
    except FAILURES as e:
        _fail("Error generating fixture", e)
    if result.n == 0:
        click.echo("⚠️  Empty fixture: manifest has no utterances", err=True)
    click.echo(f"✅ Manifest: {result.manifest} ({result.n} utterances, {result.n_ties} ties)")


@cli.command()
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False), help="JSONL manifest")
@click.option("--out", "out_file", default="labels.json", show_default=True, help="Output labels file")
@click.option("--strict", is_flag=True, help="Abort on the first malformed line")
@click.option("--stats-out", type=click.Path(dir_okay=False), help="Also write the corpus statistics alone")
def labels(manifest, out_file, strict, stats_out):
    """Construct ambiguity-preserving label sets and corpus statistics."""
    try:
        artifact = build_labels(manifest, out_file, strict)
        if stats_out:
            write_json(stats_out, artifact["stats"])
    except FAILURES as e:
        _fail("Error building labels", e)
    stats = artifact["stats"]
    if artifact["issues"]:
        click.echo(f"⚠️  Skipped {len(artifact['issues'])} malformed lines", err=True)
    click.echo(f"📊 {stats['n']} utterances, tie rate {stats['tie_rate']:.3f}, "
               f"mean labels {stats['label_count']['mean']:.2f}")
    click.echo(f"✅ Labels saved to {out_file}")


@cli.group()
def prior():
    """Build and inspect the structural co-occurrence prior."""


@prior.command("build")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Training-split manifest")
@click.option("--out", "out_file", default="prior.json", show_default=True, help="Output prior file")
@click.option("--lambda", "--lam", "lam", default=0.5, show_default=True, type=float,
              help="Fusion weight of the primary-minor matrix")
@click.option("--eps", default=1e-8, show_default=True, type=float, help="Normalization epsilon")
def prior_build(manifest, out_file, lam, eps):
    """Build the prior table from a training manifest."""
    try:
        table = build_prior_file(manifest, out_file, lam, eps)
    except FAILURES as e:
        _fail("Error building prior", e)
    click.echo(f"✅ Prior saved to {out_file} ({table.fingerprint[:24]}...)")


@prior.command("query")
@click.option("--prior", "prior_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--candidates", required=True, help="Comma-separated candidate emotions")
@click.option("--intent", default="verify", type=click.Choice(["verify", "expand"]), show_default=True)
@click.option("--anchor", help="Anchor emotion (verify only)")
@click.option("--tie-mode", is_flag=True, help="Also rank pairs by tie co-occurrence")
@click.option("-k", "k", default=3, show_default=True, type=int, help="Pairs to return")
@click.option("-l", "l_", default=2, show_default=True, type=int, help="Suggestions to return")
def prior_query(prior_file, candidates, intent, anchor, tie_mode, k, l_):
    """Show the scheduling answer for a candidate set."""
    try:
        table = PriorTable.load(prior_file)
        q = PriorQuery.from_arguments(
            [c.strip() for c in candidates.split(",") if c.strip()], intent, anchor, tie_mode, k, l_
        )
        answer = query(table, q)
    except FAILURES as e:
        _fail("Error querying prior", e)
    click.echo(json.dumps(answer.to_dict(), indent=2, sort_keys=True))


@cli.command()
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Training-split manifest")
@click.option("--scope", default="corpus", type=click.Choice(["corpus", "speaker"]), show_default=True)
@click.option("--out", "out_file", default="refs.json", show_default=True, help="Output reference file")
@click.option("--jobs", default=1, show_default=True, type=int, help="Worker threads")
def refstats(manifest, scope, out_file, jobs):
    """Build global acoustic reference statistics."""
    click.echo("🔄 Extracting per-utterance metrics...")
    try:
        ref = build_refs_file(manifest, out_file, scope, jobs)
    except FAILURES as e:
        _fail("Error building references", e)
    for fallback in ref.fallbacks:
        click.echo(f"⚠️  Speaker {fallback} has too few utterances; using the corpus reference", err=True)
    click.echo(f"✅ References saved to {out_file} ({len(ref.corpus)} metrics, {len(ref.speakers)} speakers)")


def _policy_options(f):
    options = [
        click.option("--policy", default="heuristic", show_default=True,
                     help="heuristic | scripted:FILE | remote:URL | openai:MODEL | anthropic:MODEL"),
        click.option("--model", envvar=ENV_MODEL, help="Model name for remote policies"),
        click.option("--api-key", envvar=ENV_API_KEY, help="API key for remote policies"),
        click.option("--rollouts", default=4, show_default=True, type=int, help="Rollouts per utterance (K)"),
        click.option("--seed", default=0, show_default=True, type=int, help="Random seed"),
        click.option("--max-calls", default=DEFAULT_MAX_CALLS, show_default=True, type=int,
                     help="Hard cap on phase-2 tool calls"),
        click.option("--audio-mode", default="reference", type=click.Choice(AUDIO_MODES), show_default=True,
                     help="Pass audio by reference descriptor or as a feature summary"),
        click.option("--jobs", default=1, show_default=True, type=int, help="Worker threads"),
        click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False),
                     help="YAML/JSON config; its keys override flags"),
    ]
    for option in reversed(options):
        f = option(f)
    return f


@cli.command()
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--prior", "prior_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--refs", "refs_file", type=click.Path(exists=True, dir_okay=False),
              help="Global reference file (local references only when omitted)")
@click.option("--out", "out_dir", default="traj", show_default=True, help="Trajectory directory")
@_policy_options
def run(manifest, prior_file, refs_file, out_dir, policy, model, api_key, rollouts, seed, max_calls,
        audio_mode, jobs, config_file):
    """Run K rollouts of the three-phase protocol per utterance."""
    flags = dict(manifest=manifest, out=out_dir, policy=policy, model=model, api_key=api_key,
                 rollouts=rollouts, seed=seed, max_calls=max_calls, audio_mode=audio_mode, jobs=jobs)
    try:
        cfg = build_run_config(flags, config_file)
        records = load_manifest(cfg.manifest).records
        refs = None
        if refs_file:
            refs = GlobalReference.load(refs_file, manifest_sha256=None)
        base = AgentConfig(
            prior=PriorTable.load(prior_file),
            refs=refs,
            max_calls=cfg.max_calls,
            seed=cfg.seed,
            audio_mode=cfg.audio_mode,
        )
        factory = build_policy_factory(cfg.policy, api_key=cfg.api_key, model=cfg.model,
                                       phase_prompts=load_prompts())
        click.echo(f"🔄 Running {cfg.rollouts} rollouts for {len(records)} utterances...")
        trajectories = run_rollouts(records, factory, base, cfg.rollouts, cfg.jobs)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        write_jsonl(out / TRAJECTORY_FILE, (t.to_dict() for t in trajectories))
    except FAILURES as e:
        _fail("Error running rollouts", e)
    aborted = [t for t in trajectories if t.aborted]
    if aborted:
        click.echo(f"⚠️  {len(aborted)} trajectories aborted "
                   f"({', '.join(sorted({t.status for t in aborted}))})", err=True)
    click.echo(f"✅ {len(trajectories)} trajectories saved to {out / TRAJECTORY_FILE}")


@cli.command()
@click.option("--traj", required=True, type=click.Path(exists=True), help="Trajectory directory or file")
@click.option("--gt", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Ground truth (manifest .jsonl or labels.json)")
@click.option("--weights", default="B", show_default=True,
              help=f"Weight preset ({', '.join(PRESETS)}) or JSON override file")
@click.option("--out", "out_file", default="rewards.jsonl", show_default=True)
def score(traj, gt, weights, out_file):
    """Compute reward breakdowns, trust gates and group advantages."""
    try:
        rows = score_file(traj, gt, out_file, RewardWeights.resolve(weights))
    except FAILURES as e:
        _fail("Error scoring trajectories", e)
    scored = [r for r in rows if r["composite"] is not None]
    if scored:
        mean = sum(r["composite"] for r in scored) / len(scored)
        click.echo(f"📊 {len(scored)} scored trajectories, mean reward {mean:.4f}")
    click.echo(f"✅ Rewards saved to {out_file}")


@cli.command("eval")
@click.option("--traj", required=True, type=click.Path(exists=True), help="Trajectory directory or file")
@click.option("--gt", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Ground truth (manifest .jsonl or labels.json)")
@click.option("--out", "out_file", default="report.json", show_default=True)
def eval_cmd(traj, gt, out_file):
    """Evaluate predictions with ambiguity-aware metrics."""
    try:
        report = eval_file(traj, gt, out_file)
    except FAILURES as e:
        _fail("Error evaluating trajectories", e)
    click.echo(format_table(EvalReport.from_dict(report)))
    click.echo(f"✅ Report saved to {out_file}")


@cli.command()
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), help="Evaluation manifest")
@click.option("--train-manifest", type=click.Path(exists=True, dir_okay=False),
              help="Training split for prior and references")
@click.option("--allow-eval-prior", is_flag=True,
              help="Without --train-manifest, build prior and references from --manifest")
@click.option("--out", "out_dir", default="adept_out", show_default=True)
@click.option("--weights", default="B", show_default=True, help="Weight preset or JSON override file")
@click.option("--refs-scope", default="corpus", type=click.Choice(["corpus", "speaker"]), show_default=True)
@click.option("--resume", is_flag=True, help="Skip stages whose outputs are still fresh")
@_policy_options
def pipeline(manifest, train_manifest, allow_eval_prior, out_dir, weights, refs_scope, resume, policy, model,
             api_key, rollouts, seed, max_calls, audio_mode, jobs, config_file):
    """Run labels -> refstats -> prior -> run -> score -> eval."""
    flags = dict(manifest=manifest, train_manifest=train_manifest, allow_eval_prior=allow_eval_prior, out=out_dir,
                 weights=weights, refs_scope=refs_scope, policy=policy, model=model, api_key=api_key, rollouts=rollouts,
                 seed=seed, max_calls=max_calls, audio_mode=audio_mode, jobs=jobs)
    glyphs = {"running": "🔄", "done": "✅", "skipped": "⏭️ "}

    def progress(stage: str, status: str) -> None:
        click.echo(f"{glyphs[status]} {stage}: {status}")

    try:
        cfg = build_run_config(flags, config_file)
        Pipeline(cfg).run(resume=resume, progress=progress)
    except FAILURES as e:
        _fail("Pipeline failed", e)
    click.echo(f"✅ Artifacts in {cfg.out}")


@cli.command()
@click.option("--report", "report_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--rewards", "rewards_file", type=click.Path(exists=True, dir_okay=False),
              help="rewards.jsonl to summarize next to the metrics")
@click.option("--panels", "panels_file", type=click.Path(dir_okay=False),
              help="Write tool-usage panel data (JSON arrays) for external plotting")
@click.option("--name", default="adept", show_default=True, help="Row label in the table")
def report(report_file, rewards_file, panels_file, name):
    """Print the summary table and export tool-usage panel data."""
    try:
        with open(report_file, "r", encoding="utf-8") as f:
            data = json.load(f)
        parsed = EvalReport.from_dict(data)
        click.echo(format_table(parsed, name))
        for note in parsed.notes:
            click.echo(f"⚠️  {note}")
        if rewards_file:
            _summarize_rewards(rewards_file)
        if panels_file:
            panels = {
                level: {"calls": bucket["calls"], "tools": bucket["tools"]}
                for level, bucket in parsed.tool_usage.items()
            }
            with open(panels_file, "w", encoding="utf-8") as f:
                json.dump(panels, f, indent=2, sort_keys=True)
            click.echo(f"✅ Panel data saved to {panels_file}")
    except FAILURES as e:
        _fail("Error reading report", e)
    except KeyError as e:
        _fail("Malformed report", e)


def _summarize_rewards(path: str) -> None:
    rows = read_jsonl(path)
    scored = [r for r in rows if r.get("composite") is not None]
    aborted = len(rows) - len(scored)
    click.echo("")
    click.echo(f"Rewards: {len(scored)} scored, {aborted} aborted")
    if scored:
        for key in ("r_fmt", "r_phase", "r_out", "r_evid", "r_tool", "composite", "ungated"):
            mean = sum(r[key] for r in scored) / len(scored)
            click.echo(f"  {key:<10} {mean:.4f}")


if __name__ == "__main__":
    cli()
