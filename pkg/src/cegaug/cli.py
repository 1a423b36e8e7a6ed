"""Command-line interface: a thin client over the service endpoints.

Every subcommand sends one request to the service (remote when --server is
given, otherwise an in-process instance) and prints the JSON response.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .client import ServiceClient


def _emit(obj: dict) -> None:
    click.echo(json.dumps(obj, indent=2))


def _load_config(path: str) -> dict:
    text = Path(path).read_text()
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text)
    return json.loads(text)


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Service URL; default runs the service in-process.")
@click.pass_context
def main(ctx, server):
    """Counterexample-guided data augmentation toolkit."""
    ctx.obj = ServiceClient(server)


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("cegaug.service:app", host=host, port=port)


@main.group()
def assets():
    """Asset library management."""


@assets.command("gen-test")
@click.argument("dest_dir")
@click.option("--n-backgrounds", "-b", default=5, type=int)
@click.option("--n-cars", "-c", default=6, type=int)
@click.option("--size", default=64, type=int)
@click.option("--seed", default=0, type=int)
@click.pass_obj
def assets_gen_test(client, dest_dir, n_backgrounds, n_cars, size, seed):
    """Write a procedural test asset pack."""
    _emit(client.post("/assets/generate", {
        "dest_dir": dest_dir, "n_backgrounds": n_backgrounds,
        "n_cars": n_cars, "size": size, "seed": seed}))


@main.group()
def annotate():
    """Background annotation sidecars."""


@annotate.command("validate")
@click.argument("file", type=click.Path())
@click.pass_obj
def annotate_validate(client, file):
    """Check a trapezoid annotation sidecar."""
    body = client.post("/annotations/validate", {"path": file})
    _emit(body)
    if not body["ok"]:
        sys.exit(1)


@main.command()
@click.option("--library", required=True, help="Asset library directory.")
@click.option("--method", type=click.Choice(["uniform", "halton", "ce", "feedback"]),
              default="uniform")
@click.option("-n", "count", default=1, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--halton-start", default=1, type=int)
@click.option("--feedback", "feedback_path", default=None,
              help="FeedbackSpec JSON for --method feedback.")
@click.option("--out", default=None, help="Write modifications to a JSONL file.")
@click.pass_obj
def sample(client, library, method, count, seed, halton_start, feedback_path, out):
    """Sample modifications from the semantic space."""
    body = client.post("/samples", {
        "library_dir": library, "method": method, "n": count, "seed": seed,
        "halton_start": halton_start, "feedback_path": feedback_path})
    if out:
        with open(out, "w") as f:
            for m in body["modifications"]:
                f.write(json.dumps(m) + "\n")
        _emit({"written": len(body["modifications"]), "path": out})
    else:
        for m in body["modifications"]:
            click.echo(json.dumps(m))


@main.command()
@click.option("--library", required=True)
@click.option("--manifest", default="manifest.jsonl", help="Manifest file name.")
@click.option("--out-dir", required=True)
@click.option("-n", "count", default=None, type=int)
@click.option("--method", type=click.Choice(["uniform", "halton", "ce", "feedback"]),
              default="uniform")
@click.option("--seed", default=0, type=int)
@click.option("--mods-file", default=None,
              help="JSONL of modifications to render instead of sampling.")
@click.option("--feedback", "feedback_path", default=None)
@click.pass_obj
def generate(client, library, manifest, out_dir, count, method, seed, mods_file,
             feedback_path):
    """Render sampled or given modifications into a labeled dataset."""
    mods = None
    if mods_file:
        mods = [json.loads(line) for line in open(mods_file) if line.strip()]
    _emit(client.post("/images/generate", {
        "library_dir": library, "out_dir": out_dir, "manifest_name": manifest,
        "modifications": mods, "n": count, "method": method, "seed": seed,
        "feedback_path": feedback_path}))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.pass_obj
def harvest(client, config_path):
    """Collect counterexamples per the loop config."""
    _emit(client.post("/harvests", {"config": _load_config(config_path)}))


@main.command("run-cycles")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("-c", "--cycles", default=1, type=int)
@click.pass_obj
def run_cycles_cmd(client, config_path, cycles):
    """Run the full multi-cycle augmentation experiment."""
    _emit(client.post("/cycles", {"config": _load_config(config_path),
                                  "n_cycles": cycles}))


@main.command("analyze-errors")
@click.option("--table", "table_path", required=True, type=click.Path(exists=True))
@click.option("--max-k", default=3, type=int)
@click.option("--top-n", default=5, type=int)
@click.option("--library", default=None,
              help="Asset library (needed with --feedback-out).")
@click.option("--feedback-out", default=None,
              help="Also derive and write a FeedbackSpec JSON.")
@click.pass_obj
def analyze_errors(client, table_path, max_k, top_n, library, feedback_out):
    """Analyze an error table: PCA ranking plus frequent combinations."""
    _emit(client.post("/errortables/analyze", {
        "table_path": table_path, "max_k": max_k, "top_n": top_n,
        "library_dir": library, "feedback_out": feedback_out}))


@main.command("eval")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--model", required=True,
              help="surrogate:<rules.json> | http:<url> | exec:<cmd>")
@click.option("--library", required=True)
@click.pass_obj
def eval_cmd(client, manifest_path, model, library):
    """Evaluate a detector over a labeled manifest."""
    body = client.post("/evaluate", {
        "library_dir": library, "manifest_path": manifest_path, "model": model})
    body.pop("per_image", None)
    _emit(body)


@main.command("augment-standard")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True)
@click.option("--seed", default=0, type=int)
@click.option("--fraction", default=0.5, type=float,
              help="Fraction of images to augment with crop/flip/blur copies.")
@click.pass_obj
def augment_standard(client, manifest_path, out_dir, seed, fraction):
    """Classic crop/flip/blur augmentation of an existing manifest."""
    _emit(client.post("/augment/standard", {
        "manifest_path": manifest_path, "out_dir": out_dir,
        "seed": seed, "fraction": fraction}))


if __name__ == "__main__":
    main()
