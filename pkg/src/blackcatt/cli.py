"""Command-line entry points.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 detector
unreachable. BLACKCATT_SEED overrides the config seed when set.
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .gateway import GatewayError, HttpDetector, SyntheticDetector, SyntheticScenario
from .harness import (
    ConfigError,
    ExperimentConfig,
    emit_report,
    ingest_dataset,
    run_experiment,
)
from .imagecore import CodecError, load_png
from .saliency import TargetSpec, drise_map, rex_map

EXIT_CONFIG = 2
EXIT_DETECTOR = 3


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _build_simple_detector(detector_url: str | None, synthetic: str | None, conf: float):
    if (detector_url is None) == (synthetic is None):
        _fail(EXIT_CONFIG, "exactly one of --detector / --synthetic is required")
    if synthetic is not None:
        try:
            scenario = SyntheticScenario.from_json(synthetic)
        except (OSError, ValueError) as exc:
            _fail(EXIT_CONFIG, f"cannot load scenario {synthetic}: {exc}")
        return SyntheticDetector(scenario, conf_threshold=conf)
    return HttpDetector(detector_url, conf_threshold=conf)


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Black-box adversarial attacks against object detectors."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("--dataset", required=True, type=click.Path(file_okay=False))
@click.option("--detector", "detector_url", default=None, help="Detector endpoint URL.")
@click.option("--synthetic", default=None, type=click.Path(dir_okay=False),
              help="Synthetic scenario JSON file.")
@click.option("--conf", default=0.25, show_default=True, help="Confidence threshold.")
def ingest(dataset: str, detector_url: str | None, synthetic: str | None, conf: float) -> None:
    """List the dataset images that produce exactly one detection."""
    detector = _build_simple_detector(detector_url, synthetic, conf)
    try:
        kept = ingest_dataset(dataset, detector, conf)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except GatewayError as exc:
        _fail(EXIT_DETECTOR, str(exc))
    for image, detection in kept:
        click.echo(
            f"{image.image_id}\t{detection.label}\t{detection.confidence:.4f}\t"
            f"{detection.bbox.as_list()}"
        )
    click.echo(f"kept {len(kept)} single-detection images", err=True)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
def attack(config_path: str) -> None:
    """Run the full experiment described by a config file."""
    try:
        config = ExperimentConfig.from_json(config_path)
        output_dir = run_experiment(config)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except GatewayError as exc:
        _fail(EXIT_DETECTOR, str(exc))
    click.echo(f"records written to {output_dir / 'records.jsonl'}")


@main.command()
@click.option("--results", required=True, type=click.Path(file_okay=False))
def report(results: str) -> None:
    """Recompute report CSVs from stored records."""
    try:
        written = emit_report(results)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    if not written:
        click.echo("no records found: nothing to report", err=True)
        return
    for path in written:
        click.echo(str(path))


@main.command()
@click.option("--method", type=click.Choice(["rex", "drise"]), required=True)
@click.option("--image", "image_path", required=True, type=click.Path(dir_okay=False))
@click.option("--detector", "detector_url", default=None)
@click.option("--synthetic", default=None, type=click.Path(dir_okay=False))
@click.option("--conf", default=0.25, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--output", default=None, type=click.Path(dir_okay=False),
              help="Write the map payload JSON here instead of stdout.")
def saliency(
    method: str,
    image_path: str,
    detector_url: str | None,
    synthetic: str | None,
    conf: float,
    seed: int,
    output: str | None,
) -> None:
    """Compute a responsibility map for an image's top detection."""
    detector = _build_simple_detector(detector_url, synthetic, conf)
    try:
        image = load_png(image_path, image_id=Path(image_path).stem)
    except (OSError, CodecError) as exc:
        _fail(EXIT_CONFIG, f"cannot load image: {exc}")
    try:
        detections = detector.detect(image)
        if detections.empty:
            _fail(EXIT_CONFIG, "image produces no detection to explain")
        target = TargetSpec.for_detection(detections[0])
        if method == "drise":
            result = drise_map(image, detector, target, seed=seed)
        else:
            result = rex_map(image, detector, target, seed=seed)
    except GatewayError as exc:
        _fail(EXIT_DETECTOR, str(exc))
    if output:
        result.save(output)
        click.echo(output)
    else:
        click.echo(json.dumps(result.to_payload(), sort_keys=True))


if __name__ == "__main__":
    main()
