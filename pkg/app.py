"""
Command-line interface for the Reading-Order Restoration system.
Turns character detections and a layout line mask into ordered page text,
fuses it with text-line recognition output, evaluates against ground truth
and generates synthetic oracle pages.

Exit codes: 0 success, 1 input or configuration error, 2 pipeline error.
"""

import os
import sys
import json
import logging
import argparse
from typing import List, Optional

import yaml

from config import ConfigManager
from modules.errors import ConfigError, InputError, PipelineError, ReadingOrderError
from modules.pipeline import (
    PageManifest, detect_lines, dump_json, load_detections, load_manifests, load_mask,
    merge_windows, plan_windows, process_pages, run_eval, save_detections, save_manifests, save_synth_page,
)
from modules.synth import SynthSpec, corrupt, generate
from modules.visualize import render_debug

logger = logging.getLogger("ReadingOrder")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_PIPELINE = 2


def _write_output(text: str, path: Optional[str]) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    directory = os.path.dirname(path)
    try:
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(text)
    except OSError as e:
        raise InputError(f"cannot write output: {e.strerror or e}", path)


def _page_manifests(args, config, require_lines: bool = False) -> List[PageManifest]:
    """Pages from --manifest, or a single page from the per-file flags."""
    if args.manifest:
        manifests = load_manifests(args.manifest)
    else:
        if not args.detections or not args.mask:
            raise InputError("either --manifest or both --detections and --mask are required")
        manifests = [PageManifest(
            page_id=args.page_id,
            detections=args.detections,
            mask=args.mask,
            lines=getattr(args, 'lines', None),
            mask_scale=args.scale or config.mask.scale,
            page_width=args.page_size[0] if args.page_size else None,
            page_height=args.page_size[1] if args.page_size else None,
        )]
    if require_lines:
        missing = [m.page_id for m in manifests if not m.lines]
        if missing:
            raise InputError(f"line-recognition input missing for pages: {', '.join(missing)}")
    return manifests


def _exit_code(failures: List[ReadingOrderError], continue_on_error: bool) -> int:
    if not failures or continue_on_error:
        return EXIT_OK
    if any(isinstance(e, InputError) for e in failures):
        return EXIT_INPUT
    return EXIT_PIPELINE


def cmd_lines(args, config) -> int:
    """Detect boundary lines from a mask."""
    mask = load_mask(args.mask, args.scale or config.mask.scale, config.mask.threshold)
    page_size = tuple(args.page_size) if args.page_size else None
    try:
        lines = detect_lines(mask, config, page_size)
    except ReadingOrderError as e:
        raise PipelineError(os.path.basename(args.mask), "lines", str(e)) from e
    _write_output(dump_json([line.to_list() for line in lines]), args.output)
    return EXIT_OK


def _run_pages(args, config, require_lines: bool = False):
    manifests = _page_manifests(args, config, require_lines)
    outcomes = process_pages(manifests, config, args.continue_on_error)
    failures = [error for _, _, error in outcomes if error is not None]
    results = [result for _, result, _ in outcomes if result is not None]
    return results, failures


def cmd_parse(args, config) -> int:
    """Restore reading order and emit text (plus structure JSON with --output-dir)."""
    results, failures = _run_pages(args, config)
    if args.output_dir:
        for result in results:
            _write_output(dump_json(result.to_record()), os.path.join(args.output_dir, f"{result.page_id}.json"))
            _write_output(result.text + "\n", os.path.join(args.output_dir, f"{result.page_id}.txt"))
    else:
        _write_output("\n\n".join(r.text for r in results) + "\n", args.output)
    return _exit_code(failures, args.continue_on_error)


def cmd_rescore(args, config) -> int:
    """Fuse character output with text-line recognition output."""
    results, failures = _run_pages(args, config, require_lines=True)
    if args.output_dir:
        for result in results:
            _write_output(result.fused_text + "\n", os.path.join(args.output_dir, f"{result.page_id}.fused.txt"))
            _write_output(dump_json(result.to_record()), os.path.join(args.output_dir, f"{result.page_id}.json"))
    else:
        _write_output("\n\n".join(r.fused_text for r in results) + "\n", args.output)
    return _exit_code(failures, args.continue_on_error)


def cmd_eval(args, config) -> int:
    """Evaluate pages against ground truth and print a JSON report."""
    manifests = load_manifests(args.manifest)
    summary = run_eval(manifests, config, args.continue_on_error)
    report = summary.dict()
    if not args.per_page:
        report.pop('pages')
    _write_output(dump_json(report), args.output)
    return EXIT_OK


def cmd_synth(args, config) -> int:
    """Generate seeded synthetic pages plus a manifest list."""
    spec_data = {}
    if args.spec:
        try:
            with open(args.spec, 'r', encoding='utf-8') as f:
                spec_data = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise InputError(f"cannot read synth spec: {e}", args.spec)
    try:
        base = SynthSpec.parse_obj(spec_data)
    except ValueError as e:
        raise InputError(f"invalid synth spec: {e}", args.spec)

    manifests = []
    for k in range(args.count):
        spec = base.copy(update={'seed': base.seed + k})
        page = generate(spec)
        if args.corrupt:
            page = corrupt(page, spec)
        confidence = None if args.no_lines else args.line_confidence
        manifests.append(save_synth_page(page, args.output_dir, f"page_{spec.seed:05d}", confidence))
    save_manifests(manifests, os.path.join(args.output_dir, "manifest.yaml"))
    logger.info(f"Wrote {len(manifests)} synthetic pages to {args.output_dir}")
    return EXIT_OK


def cmd_merge_windows(args, config) -> int:
    """
    Merge per-window detection files. The windows file is a JSON array of
    {"offset": [x, y], "detections": "<path>"} entries, paths relative to it.
    With --page-size, entries may omit "offset" and take the planned crop
    offsets (windows.window_size, windows.overlap) in order.
    """
    try:
        with open(args.windows, 'r', encoding='utf-8') as f:
            entries = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read windows file: {e}", args.windows)
    if not isinstance(entries, list):
        raise InputError("windows file must be a JSON array", args.windows)

    planned = None
    if args.page_size:
        width, height = (int(v) for v in args.page_size)
        planned = plan_windows(width, height, config.windows.window_size, config.windows.overlap)

    base_dir = os.path.dirname(args.windows)
    window_outputs = []
    for index, entry in enumerate(entries):
        try:
            path = entry['detections']
            if 'offset' in entry:
                dx, dy = (float(v) for v in entry['offset'])
            elif planned is not None and index < len(planned):
                dx, dy = (float(v) for v in planned[index])
            else:
                raise KeyError('offset')
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"invalid window entry: {e}", args.windows, index)
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        window_outputs.append(((dx, dy), load_detections(path)))

    iou = args.iou if args.iou is not None else config.windows.nms_iou
    merged = merge_windows(window_outputs, iou)
    if args.output:
        save_detections(merged, args.output)
    else:
        _write_output(dump_json([d.to_record() for d in merged]), None)
    return EXIT_OK


def cmd_render_debug(args, config) -> int:
    """Draw the debug overlay of each page."""
    results, failures = _run_pages(args, config)
    for result in results:
        path = args.output if len(results) == 1 and args.output.endswith('.png') else \
            os.path.join(args.output, f"{result.page_id}.debug.png")
        metadata = render_debug(result, path)
        logger.info(f"Page {result.page_id}: drew {metadata['columns']} columns, {metadata['lines']} lines")
    return _exit_code(failures, args.continue_on_error)


def _add_page_args(parser: argparse.ArgumentParser, with_lines: bool = True) -> None:
    group = parser.add_argument_group('Page input')
    group.add_argument('--manifest', help='Manifest list file (YAML/JSON) for batch input')
    group.add_argument('--detections', help='Detections JSON for a single page')
    group.add_argument('--mask', help='Line mask image (PNG/PGM) for a single page')
    if with_lines:
        group.add_argument('--lines', help='Line-recognition records JSON for a single page')
    group.add_argument('--scale', type=int, help='Page pixels per mask pixel (default: mask.scale)')
    group.add_argument('--page-size', type=float, nargs=2, metavar=('WIDTH', 'HEIGHT'),
                       help='Page size in pixels (default: mask size x scale)')
    group.add_argument('--page-id', default='page', help='Page id for single-page input')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Historical document reading-order restoration')
    parser.add_argument('--config', help='Configuration file (.yaml, .json or .conf); '
                                         'defaults to $READORDER_CONFIG')
    parser.add_argument('--set', action='append', default=[], metavar='SECTION.KEY=VALUE',
                        help='Override one configuration value (repeatable)')
    parser.add_argument('--mask-threshold', type=int, help='8-bit value at or above which mask pixels are lines')
    parser.add_argument('--workers', type=int, help='Pages processed concurrently')
    parser.add_argument('--continue-on-error', action='store_true',
                        help='Skip failing pages instead of exiting nonzero')
    parser.add_argument('--debug', action='store_true', help='Enable debug logging')

    subparsers = parser.add_subparsers(dest='command', help='Command to execute')

    lines_parser = subparsers.add_parser('lines', help='Detect boundary lines in a mask')
    lines_parser.add_argument('--mask', required=True, help='Line mask image (PNG/PGM)')
    lines_parser.add_argument('--scale', type=int, help='Page pixels per mask pixel (default: mask.scale)')
    lines_parser.add_argument('--page-size', type=float, nargs=2, metavar=('WIDTH', 'HEIGHT'))
    lines_parser.add_argument('--output', help='Output JSON file (default: stdout)')
    lines_parser.set_defaults(handler=cmd_lines)

    parse_parser = subparsers.add_parser('parse', help='Restore reading order and emit text')
    _add_page_args(parse_parser)
    parse_parser.add_argument('--output', help='Output text file (default: stdout)')
    parse_parser.add_argument('--output-dir', help='Write <page_id>.json and <page_id>.txt per page')
    parse_parser.set_defaults(handler=cmd_parse)

    rescore_parser = subparsers.add_parser('rescore', help='Fuse character and text-line recognition')
    _add_page_args(rescore_parser)
    rescore_parser.add_argument('--output', help='Output text file (default: stdout)')
    rescore_parser.add_argument('--output-dir', help='Write <page_id>.fused.txt and <page_id>.json per page')
    rescore_parser.set_defaults(handler=cmd_rescore)

    eval_parser = subparsers.add_parser('eval', help='Evaluate pages against ground truth')
    eval_parser.add_argument('--manifest', required=True, help='Manifest list file with ground truth')
    eval_parser.add_argument('--output', help='Report JSON file (default: stdout)')
    eval_parser.add_argument('--per-page', action='store_true', help='Include the per-page breakdown')
    eval_parser.set_defaults(handler=cmd_eval)

    synth_parser = subparsers.add_parser('synth', help='Generate synthetic oracle pages')
    synth_parser.add_argument('--output-dir', required=True, help='Directory for pages and manifest.yaml')
    synth_parser.add_argument('--count', type=int, default=1, help='Number of pages (seeds seed..seed+count-1)')
    synth_parser.add_argument('--spec', help='Synth spec YAML/JSON (SynthSpec fields)')
    synth_parser.add_argument('--corrupt', action='store_true', help='Apply jitter, label flips and specks')
    synth_parser.add_argument('--no-lines', action='store_true', help='Do not emit oracle line records')
    synth_parser.add_argument('--line-confidence', type=float, default=0.95,
                              help='Confidence of the oracle line recognizer')
    synth_parser.set_defaults(handler=cmd_synth)

    merge_parser = subparsers.add_parser('merge-windows', help='Merge sliding-window detections with NMS')
    merge_parser.add_argument('--windows', required=True, help='JSON array of {offset, detections}')
    merge_parser.add_argument('--iou', type=float, help='NMS IoU threshold (default: windows.nms_iou)')
    merge_parser.add_argument('--page-size', type=int, nargs=2, metavar=('WIDTH', 'HEIGHT'),
                              help='Plan offsets for entries without one (windows.window_size, windows.overlap)')
    merge_parser.add_argument('--output', help='Merged detections JSON (default: stdout)')
    merge_parser.set_defaults(handler=cmd_merge_windows)

    render_parser = subparsers.add_parser('render-debug', help='Draw debug overlays')
    _add_page_args(render_parser, with_lines=False)
    render_parser.add_argument('--output', required=True, help='PNG file (single page) or output directory')
    render_parser.set_defaults(handler=cmd_render_debug)

    return parser


def _load_config(args):
    manager = ConfigManager.from_sources(args.config)
    for item in args.set:
        name, sep, value = item.partition('=')
        if not sep or '.' not in name:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        section, key = name.split('.', 1)
        manager.set_value(section, key, yaml.safe_load(value))
    if args.mask_threshold is not None:
        manager.set_value('mask', 'threshold', args.mask_threshold)
    if args.workers is not None:
        manager.set_value('pipeline', 'workers', args.workers)
    if args.debug:
        manager.config.debug_mode = True
    return manager.get_config()


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return EXIT_INPUT

    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
    )

    try:
        config = _load_config(args)
        if config.debug_mode:
            logging.getLogger().setLevel(logging.DEBUG)
        return args.handler(args, config)
    except (InputError, ConfigError) as e:
        logger.error(str(e))
        return EXIT_INPUT
    except ReadingOrderError as e:
        logger.error(str(e))
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
