"""
**fml** is a finite-depth laboratory for `(α_n)`-regular sets: nested cube
systems on `[0,1)` and `[0,1)²` from which the cube holding each center is
removed, the radially weighted doubling measures built on them, and the
experiments that tell fat sets (positive measure for every doubling
measure) from thin ones.

Everything is driven from the command line:

    fml build --space 2d --bases odd:2n+1 --depth 4 --lazy --out sys.json
    fml measure --system sys.json --rho 1.0 --n0 auto --out m.json
    fml fat-thin --system sys.json --rho 0 --csv levels.csv

Each command reads its settings from built-in defaults, then from a TOML
file given with `--config` (tables `[run]`, `[sampling]`, `[tolerances]` and
`[output]`), then from its flags, later sources winning. The settings are
written into every JSON artifact under `"config"`, so an artifact says how
to make it again.

Exit status is 0 on success, 1 for a usage error (bad flag, bad config, bad
input document) and 2 when a computed result breaks an invariant; the
offending cube or sample is then written next to the output as
`<out>.witness.json`.

The environment variable `FML_THREADS` caps the number of worker threads of
the sampling scans. Results do not depend on it.
"""

# Import our external dependencies.
import argparse
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from os import path
from typing import List, Optional, Tuple

import tomli

from fml.cubes import DEFAULT_BUDGET, SpaceModel, build_adic_system, build_distorted_carpet, \
    build_subsampled_dyadic, pushforward_power, system_from_dict, system_to_dict, validate
from fml.fatthin import fat_thin_experiment, relative_plumpness_probe, restricted_doubling_scan
from fml.generate_index import generate_index, summary_markdown
from fml.measure import NEVER, Sampling, build_measure, conservation_audit, doubling_scan, tree_to_dict, \
    weight_comparability_probe
from fml.quadrature import DEFAULT_TOLERANCE
from fml.reports import InvariantViolation, ensure_directory, load_document, write_csv, write_json, \
    write_witness
from fml.sequences import classify_family, parse_rule
from fml_resources import css as fml_css


__all__ = ('RunConfig', 'run', 'load_config', 'workers_from_env', 'VERSION')

VERSION = '0.1.0'


# === Configuration ===

@dataclass
class RunConfig:
    command: str = ''
    # The system: built from these, or read from `system`.
    space: str = '1d'
    bases: Optional[str] = None
    alpha: Optional[str] = None
    base: Optional[int] = None
    depth: Optional[int] = None
    lazy: bool = False
    budget: int = DEFAULT_BUDGET
    system: Optional[str] = None
    # The measure.
    rho: object = 'auto'
    n0: object = 'auto'
    criterion: str = 'nontrivial'
    # Scans.
    samples: int = 1000
    seed: int = 0
    source: str = 'uniform'
    rmin: float = 1e-3
    rmax: float = 0.25
    level: Optional[int] = None
    single_level: Optional[int] = None
    # Tolerances.
    tol: float = DEFAULT_TOLERANCE
    epsilon: Optional[float] = None
    # Command specific.
    T: Tuple[float, ...] = (2.0, 4.0, 8.0)
    mode: str = 'island'
    beta: float = 0.5
    factor: float = 6.0
    n: Optional[int] = None
    refine: int = 1
    n_max: Optional[int] = None
    probes: List[str] = field(default_factory=list)
    # Output.
    out: Optional[str] = None
    csv: Optional[str] = None
    index: bool = False

    def check(self):
        """Normalize the fields, raising `ValueError` on anything unusable."""
        if self.command not in COMMANDS:
            raise ValueError("Unknown command: {}".format(self.command))
        if self.space not in ('1d', '2d'):
            raise ValueError("The space must be 1d or 2d, got {}".format(self.space))
        if self.rho != 'auto':
            self.rho = float(self.rho)
        if self.n0 not in ('auto', 'never'):
            self.n0 = int(self.n0)
        if isinstance(self.T, str):
            self.T = tuple(float(t) for t in self.T.split(',') if t)
        self.T = tuple(float(t) for t in self.T)
        if self.depth is not None and self.depth < 0:
            raise ValueError("The depth must be nonnegative, got {}".format(self.depth))
        return self

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["T"] = list(self.T)
        return doc


# The TOML tables and the fields each may set; `[run]` may set any field.
TABLES = {
    'sampling': ('samples', 'seed', 'source', 'rmin', 'rmax', 'level', 'single_level'),
    'tolerances': ('tol', 'epsilon'),
    'output': ('out', 'csv', 'index'),
}


def load_config(file_path: str) -> dict:
    """
    Read a TOML run file into a flat dict of `RunConfig` fields.
    """
    try:
        with open(file_path, "rb") as f:
            doc = tomli.load(f)
    except tomli.TOMLDecodeError as e:
        raise ValueError("{} is not valid TOML: {}".format(file_path, e))
    except OSError as e:
        raise ValueError("Can't read {}: {}".format(file_path, e))
    names = {f.name for f in fields(RunConfig)}
    values = {}
    for table, entries in doc.items():
        allowed = names if table == 'run' else TABLES.get(table)
        if allowed is None:
            raise ValueError("Unknown table [{}] in {}".format(table, file_path))
        for key, value in entries.items():
            key = key.replace('-', '_')
            if key not in allowed:
                raise ValueError("Unknown setting {} in table [{}] of {}".format(key, table, file_path))
            values[key] = value
    return values


def workers_from_env() -> int:
    raw = os.environ.get('FML_THREADS', '1')
    try:
        workers = int(raw)
    except ValueError:
        raise ValueError("FML_THREADS must be a positive integer, got {!r}".format(raw))
    if workers < 1:
        raise ValueError("FML_THREADS must be a positive integer, got {!r}".format(raw))
    return workers


# === Building blocks of the commands ===

def _space(config: RunConfig) -> SpaceModel:
    return SpaceModel(1 if config.space == '1d' else 2)


def _build(config: RunConfig):
    depth = 4 if config.depth is None else config.depth
    if config.base is not None:
        if not config.alpha:
            raise ValueError("A subsampled system needs --alpha")
        return build_subsampled_dyadic(_space(config), config.base, parse_rule(config.alpha), depth,
                                       lazy=config.lazy, budget=config.budget)
    if not config.bases:
        raise ValueError("Give --bases, --base with --alpha, or --system")
    return build_adic_system(_space(config), parse_rule(config.bases), depth, lazy=config.lazy,
                             budget=config.budget)


def _system(config: RunConfig):
    if config.system:
        return system_from_dict(load_document(config.system, 'system'))
    return _build(config)


def _tree(config: RunConfig, system):
    rho = 0.0 if config.rho == 'auto' else config.rho
    n0 = NEVER if config.n0 == 'never' else config.n0
    # With --system, --depth truncates the loaded system.
    tree = build_measure(system, rho, n0, config.depth, config.tol, config.criterion)
    for flag in tree.flags:
        print("fml [WARNING]: {}".format(flag))
    return tree


def _out(config: RunConfig, default: str) -> str:
    return config.out or default


def _emit(config: RunConfig, doc: dict, default: str, files: list) -> str:
    dest = write_json(dict(doc, config=config.to_dict()), _out(config, default))
    print("fml: {} -> {}".format(config.command, dest))
    files.append(dest)
    return dest


def _emit_csv(config: RunConfig, columns, rows, files: list):
    if config.csv:
        dest = write_csv(columns, rows, config.csv)
        print("fml: {} -> {}".format(config.command, dest))
        files.append(dest)


def _parse_probe(text: str):
    """`x,y:R` (or `x:R` in 1D)."""
    try:
        point, radius = text.split(':')
        return tuple(float(v) for v in point.split(',')), float(radius)
    except ValueError:
        raise ValueError("Probes are written x,y:R, got {!r}".format(text))


# === Commands ===

def cmd_classify(config: RunConfig, files: list) -> dict:
    rule = config.alpha or config.bases
    if not rule:
        raise ValueError("classify needs --alpha")
    report = classify_family(parse_rule(rule))
    _emit(config, report.to_dict(), 'classification.json', files)
    return {"membership": report.membership.value, "prediction": report.prediction}


def cmd_build(config: RunConfig, files: list) -> dict:
    system = _build(config)
    _emit(config, system_to_dict(system), 'system.json', files)
    return {"depth": system.depth, "constants": system.constants.to_dict()}


def _check_validation(report, what: str):
    if not report.passed:
        failed = {k: v.witness for k, v in report.axioms.items() if not v.passed}
        raise InvariantViolation("{} fails axioms {}".format(what, ", ".join(sorted(failed))), failed)


def cmd_validate(config: RunConfig, files: list) -> dict:
    system = _system(config)
    report = validate(system, config.depth, config.T)
    _emit(config, report.to_dict(), 'validation.json', files)
    _check_validation(report, "The system")
    return {"passed": report.passed, "certified_from": report.certified_from}


def cmd_measure(config: RunConfig, files: list) -> dict:
    system = _system(config)
    tree = _tree(config, system)
    audit = conservation_audit(tree)
    bound = audit["bound"] if config.epsilon is None else config.epsilon
    audit["passed"] = max(audit["class_error"], audit["cube_error"]) <= bound
    _emit(config, dict(tree_to_dict(tree), audit=audit), 'measure.json', files)
    if not audit["passed"]:
        raise InvariantViolation("Mass is not conserved", audit)
    return {"n0": tree.n0, "class_error": audit["class_error"], "cube_error": audit["cube_error"]}


def cmd_scan_doubling(config: RunConfig, files: list) -> dict:
    tree = _tree(config, _system(config))
    sampling = Sampling(config.source, config.samples, config.seed, config.rmin, config.rmax, config.level,
                        config.single_level)
    report = doubling_scan(tree, sampling, workers_from_env())
    doc = report.to_dict()
    if config.level is not None and tree.weighted(config.level):
        doc["weight_comparability"] = weight_comparability_probe(tree, config.level, anchors=config.samples,
                                                                 seed=config.seed)
    _emit_csv(config, ('x', 'r', 'nu_r', 'nu_2r', 'ratio'),
              [(row["x"], row["r"], row["nu_r"], row["nu_2r"], row["ratio"]) for row in report.rows], files)
    _emit(config, doc, 'doubling.json', files)
    low = [row for row in report.rows if row["ratio"] is not None and row["ratio"] < 1 - 1e-9]
    if low:
        raise InvariantViolation("A doubling ratio is below 1", low[0])
    if report.zero_denominators:
        print("fml [WARNING]: {} samples had a ball of zero mass".format(report.zero_denominators))
    return {"max_ratio": report.max_ratio}


def cmd_fat_thin(config: RunConfig, files: list) -> dict:
    system = _system(config)
    n0 = NEVER if config.n0 == 'never' else config.n0
    report = fat_thin_experiment(system, config.rho, config.depth, n0, config.tol, config.criterion)
    for flag in report.flags:
        print("fml [WARNING]: {}".format(flag))
    _emit_csv(config, report.COLUMNS, report.table(), files)
    _emit(config, report.to_dict(), 'fat-thin.json', files)
    if report.violations:
        raise InvariantViolation(report.violations[0], {"violations": report.violations})
    return {"verdict": report.verdict, "prediction": report.prediction, "consistent": report.consistent}


def cmd_distort(config: RunConfig, files: list) -> dict:
    if not config.bases:
        raise ValueError("distort needs --bases")
    system = build_distorted_carpet(parse_rule(config.bases), 4 if config.depth is None else config.depth,
                                    config.mode, lazy=config.lazy, budget=config.budget)
    _emit(config, system_to_dict(system), 'distorted.json', files)
    return {"mode": config.mode, "levels": len(system.manifest)}


def cmd_restrict_scan(config: RunConfig, files: list) -> dict:
    tree = _tree(config, _system(config))
    sampling = None
    if config.n is not None:
        sampling = Sampling('survivors', config.samples, config.seed, config.rmin, config.rmax)
    report = restricted_doubling_scan(tree, config.n, sampling, config.factor, config.refine, workers_from_env())
    _emit_csv(config, ('level', 'alpha', 'x', 'r', 'nu_r', 'nu_factor_r', 'ratio'),
              [(r["level"], r["alpha"], r["x"], r["r"], r["nu_r"], r["nu_factor_r"], r["ratio"])
               for r in report["rows"]], files)
    _emit(config, report, 'restricted.json', files)
    if report["zero_denominators"]:
        print("fml [WARNING]: {} probes had a ball of zero mass".format(report["zero_denominators"]))
    return {"lambda": report["fit"]["lambda"] if report["fit"] else None}


def cmd_plumpness(config: RunConfig, files: list) -> dict:
    system = _system(config)
    probes = [_parse_probe(p) for p in config.probes] or None
    report = relative_plumpness_probe(system, config.n_max, probes)
    _emit(config, report.to_dict(), 'plumpness.json', files)
    return {"min_b": report.min_b_per_level()}


def cmd_pushforward(config: RunConfig, files: list) -> dict:
    image = pushforward_power(_system(config), config.beta)
    report = validate(image, None, config.T)
    _emit(config, dict(system_to_dict(image), validation=report.to_dict()), 'pushforward.json', files)
    _check_validation(report, "The pushforward")
    return {"beta": config.beta, "constants": image.constants.to_dict()}


COMMANDS = {
    'classify': cmd_classify,
    'build': cmd_build,
    'validate': cmd_validate,
    'measure': cmd_measure,
    'scan-doubling': cmd_scan_doubling,
    'fat-thin': cmd_fat_thin,
    'distort': cmd_distort,
    'restrict-scan': cmd_restrict_scan,
    'plumpness': cmd_plumpness,
    'pushforward': cmd_pushforward,
}


def _write_index(config: RunConfig, files: list, highlights: dict):
    outdir = ensure_directory(path.dirname(files[0]) or '.')
    with open(path.join(outdir, "fml.css"), "wb") as f:
        f.write(fml_css.encode("utf8"))
    dest = path.join(outdir, "index.html")
    with open(dest, "wb") as f:
        f.write(generate_index(files, outdir, summary_markdown(config.command, config.to_dict(), highlights),
                               VERSION))
    print("fml: {} -> {}".format(config.command, dest))


def run(config: RunConfig) -> int:
    """
    Run one command. Returns the exit status.
    """
    files: list = []
    try:
        config.check()
        highlights = COMMANDS[config.command](config, files)
    except InvariantViolation as e:
        dest = write_witness(e, config.out or '{}.json'.format(config.command))
        print("fml [FAILURE]: {}".format(e))
        print("fml: witness -> {}".format(dest))
        return 2
    except (ValueError, TypeError) as e:
        print("fml [FAILURE]: {}".format(e))
        return 1
    if config.index and files:
        _write_index(config, files, highlights)
    return 0


# === Command line ===

class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, "fml [FAILURE]: {}\n".format(message))


def _parent(*adders) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    for add in adders:
        add(parser)
    return parser


def _output_args(parser):
    parser.add_argument('-c', '--config', action='store', type=str, dest='config_file',
                        help='A TOML file with the settings of the run')
    parser.add_argument('-o', '--out', action='store', type=str,
                        help='Where to write the JSON artifact')
    parser.add_argument('-i', '--index', action='store_true',
                        help='Also write an index.html of the artifacts next to them')


def _system_args(parser):
    parser.add_argument('--system', action='store', type=str,
                        help='Read the system from a JSON document instead of building it')
    parser.add_argument('--space', action='store', type=str, choices=('1d', '2d'),
                        help='The model space: [0,1) or [0,1)^2')
    parser.add_argument('--bases', action='store', type=str,
                        help='Odd bases of an adic system: odd:2n+1, or a list such as 3,5,7')
    parser.add_argument('--alpha', action='store', type=str,
                        help='The sequence of a subsampled system: geometric:0.5, power:1.5, ...')
    parser.add_argument('--base', action='store', type=int,
                        help='Subsample the b-adic cubes of this base')
    parser.add_argument('--depth', action='store', type=int,
                        help='Deepest level')
    parser.add_argument('--lazy', action='store_true',
                        help='Create cubes on demand instead of at build time')
    parser.add_argument('--budget', action='store', type=int,
                        help='Largest number of cubes an eager build may create')


def _measure_args(parser):
    parser.add_argument('--rho', action='store', type=str,
                        help='The power of the radial weight, > -q, or auto')
    parser.add_argument('--n0', action='store', type=str,
                        help='First weighted level: a number, auto or never')
    parser.add_argument('--criterion', action='store', type=str, choices=('surrogate', 'nontrivial'),
                        help='How auto chooses n0')
    parser.add_argument('--tol', action='store', type=float,
                        help='Relative tolerance of the 2D quadrature')


def _sampling_args(parser):
    parser.add_argument('--samples', action='store', type=int,
                        help='Number of sampled balls')
    parser.add_argument('--seed', action='store', type=int,
                        help='Seed of the sampling')
    parser.add_argument('--source', action='store', type=str, choices=Sampling.SOURCES,
                        help='Where the ball centers come from')
    parser.add_argument('--rmin', action='store', type=float,
                        help='Smallest radius of the dyadic radius grid')
    parser.add_argument('--rmax', action='store', type=float,
                        help='Largest radius of the dyadic radius grid')


def _csv_args(parser):
    parser.add_argument('--csv', action='store', type=str,
                        help='Also write the per-sample or per-level table to this CSV file')


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='fml')
    sub = parser.add_subparsers(dest='command', metavar='command')
    sub.required = True
    out = _parent(_output_args)
    system = _parent(_system_args)
    measure = _parent(_measure_args)
    sampling = _parent(_sampling_args)
    table = _parent(_csv_args)

    p = sub.add_parser('classify', parents=[out, system], argument_default=argparse.SUPPRESS,
                       help='Sequence class and the fat/thin prediction')
    p = sub.add_parser('build', parents=[out, system], argument_default=argparse.SUPPRESS,
                       help='Build a cube system')
    p = sub.add_parser('validate', parents=[out, system], argument_default=argparse.SUPPRESS,
                       help='Check the axioms of a cube system')
    p.add_argument('--T', action='store', type=str, dest='T',
                   help='Comma separated ball factors for the radius comparison, e.g. 2,4,8')
    p = sub.add_parser('measure', parents=[out, system, measure], argument_default=argparse.SUPPRESS,
                       help='Build the weighted measure and audit its mass')
    p.add_argument('--epsilon', action='store', type=float,
                   help='Largest relative mass defect accepted by the audit')
    p = sub.add_parser('scan-doubling', parents=[out, system, measure, sampling, table],
                       argument_default=argparse.SUPPRESS, help='Sample doubling ratios of the measure')
    p.add_argument('--level', action='store', type=int,
                   help='Level of the cubes the centers and survivors are drawn from')
    p.add_argument('--single-level', action='store', type=int, dest='single_level',
                   help='Probe the measure weighted at this level only')
    sub.add_parser('fat-thin', parents=[out, system, measure, table], argument_default=argparse.SUPPRESS,
                   help='Center ratios, survivor masses and the fat/thin verdict')
    p = sub.add_parser('distort', parents=[out, system], argument_default=argparse.SUPPRESS,
                       help='Build a distorted 2D carpet')
    p.add_argument('--mode', action='store', type=str, choices=('island', 'relocate'),
                   help='Hand islands to kept neighbours, or relocate centers')
    p = sub.add_parser('restrict-scan', parents=[out, system, measure, sampling, table],
                       argument_default=argparse.SUPPRESS, help='Doubling ratios of the measure on the survivors')
    p.add_argument('--factor', action='store', type=float,
                   help='Compare B(x, r) with B(x, factor*r)')
    p.add_argument('--n', action='store', type=int,
                   help='Survivor level of a sampled scan; without it the spine is probed')
    p.add_argument('--refine', action='store', type=int,
                   help='Levels below the survivor level at which cut cubes are resolved')
    p = sub.add_parser('plumpness', parents=[out, system], argument_default=argparse.SUPPRESS,
                       help='Relative plumpness of the survivors')
    p.add_argument('--n-max', action='store', type=int, dest='n_max',
                   help='Deepest level searched for inscribed balls')
    p.add_argument('--probe', action='append', type=str, dest='probes',
                   help='A probe ball x,y:R (repeatable); without probes the spine is probed')
    p = sub.add_parser('pushforward', parents=[out, system], argument_default=argparse.SUPPRESS,
                       help='Push a 1D system forward under x -> x^beta and validate it')
    p.add_argument('--beta', action='store', type=float,
                   help='The power, in (0, 1]')
    return parser


def make_config(argv=None) -> RunConfig:
    """
    Defaults, then the `--config` file, then the flags.
    """
    args = vars(build_parser().parse_args(argv))
    values = {}
    config_file = args.pop('config_file', None)
    if config_file:
        values.update(load_config(config_file))
    values.update(args)
    return RunConfig(**values)


def main():
    """
    Hook spot for the console script.
    """
    try:
        config = make_config()
    except (ValueError, TypeError) as e:
        print("fml [FAILURE]: {}".format(e))
        sys.exit(1)
    sys.exit(run(config))


# Run the script.
if __name__ == "__main__":
    main()
