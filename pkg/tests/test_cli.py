import json

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from delone_rectifier.analyzers.regions import GridRegion
from delone_rectifier.cli.commands import EXIT_USAGE, EXIT_VIOLATION, artifact_stem, cli
from delone_rectifier.config import ENV_OUTPUT_DIR
from delone_rectifier.core.patch import lattice_points
from delone_rectifier.reporting.exporters import density_frame

BLOCK3 = 'a=aba.bab.aba;b=bab.aba.bab'

BLOCK3_STEM = artifact_stem(f"block:{BLOCK3}_L3")


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, tmp_path, *args):
    return runner.invoke(cli, ['-q', '-o', str(tmp_path), *args])


def write_box_regions(path, delta, lower, upper):
    cells = GridRegion.box(delta, lower, upper).cells
    lines = [f"delta {delta}"] + [f"{int(i)} {int(j)}" for i, j in cells]
    path.write_text('\n'.join(lines) + '\n')
    return str(path)


def test_artifact_stem():
    assert artifact_stem('block:a=ab.ba;b=ba.ab') == 'block_a_ab_ba_b_ba_ab'
    assert artifact_stem(':::') == 'run'


def test_generate_writes_patch_and_points(runner, tmp_path):
    result = invoke(runner, tmp_path, 'generate', '--rule', 'chair', '--depth', '3')
    assert result.exit_code == 0, result.output
    with open(tmp_path / 'chair_L3_patch.json') as f:
        data = json.load(f)
    assert data['header']['run_config']['command'] == 'generate'
    assert data['header']['run_config']['params']['depth'] == 3
    points = pd.read_csv(tmp_path / 'chair_L3_points.csv', comment='#')
    assert list(points.columns) == ['x', 'y']
    assert len(points) == 64
    assert (tmp_path / 'chair_L3_validation.json').exists()


def test_generate_output_dir_from_environment(runner, tmp_path):
    result = runner.invoke(cli, ['-q', 'generate', '--rule', 'chair', '--depth', '1'],
                           env={ENV_OUTPUT_DIR: str(tmp_path)})
    assert result.exit_code == 0, result.output
    assert (tmp_path / 'chair_L1_points.csv').exists()


@pytest.mark.parametrize('args', [
    ['generate'],
    ['generate', '--rule', 'block:badspec'],
    ['generate', '--rule', 'no-such-rule'],
    ['hierarchy', '--rule', 'chair', '--depth', '1', '--delta', 'wide'],
    ['analyze', '--rule', 'chair', '--window', '0,0,1'],
])
def test_usage_errors_exit_2(runner, tmp_path, args):
    result = invoke(runner, tmp_path, *args)
    assert result.exit_code == EXIT_USAGE


def test_analyze_patch_file(runner, tmp_path):
    assert invoke(runner, tmp_path, 'generate', '--rule', 'chair', '--depth', '3').exit_code == 0
    result = invoke(runner, tmp_path, 'analyze', '--patch', str(tmp_path / 'chair_L3_patch.json'),
                    '--regions', '5', '--region-cells', '4', '--delta', '2', '--radii', '1')
    assert result.exit_code == 0, result.output
    with open(tmp_path / 'chair_L3_patch_analysis.json') as f:
        report = json.load(f)
    x0, y0, x1, y1 = report['header']['run_config']['params']['window']
    assert (x1 - x0) * (y1 - y0) == 128
    laczkovich = pd.read_csv(tmp_path / 'chair_L3_patch_laczkovich.csv', comment='#')
    assert list(laczkovich.columns) == ['region', 'cells', 'ratio']
    assert laczkovich['cells'].tolist() == [4] * 5
    profile = pd.read_csv(tmp_path / 'chair_L3_patch_eprofile.csv', comment='#')
    assert profile['k'].tolist() == [1, 2, 4]


def test_analyze_rejects_two_sources(runner, tmp_path):
    result = invoke(runner, tmp_path, 'analyze', '--rule', 'chair', '--points', 'x.csv')
    assert result.exit_code == EXIT_USAGE


def test_hierarchy_with_region_file(runner, tmp_path):
    regions = write_box_regions(tmp_path / 'regions.txt', 3, (1, 1), (7, 7))
    result = invoke(runner, tmp_path, 'hierarchy', '--rule', f"block:{BLOCK3}", '--depth', '3',
                    '--regions-file', regions, '--ball-trials', '10')
    assert result.exit_code == 0, result.output
    rows = pd.read_csv(tmp_path / f"{BLOCK3_STEM}_hierarchy.csv", comment='#')
    assert rows['cells'].tolist() == [36]
    assert rows['m'].tolist() == [3]
    assert rows['violations'].tolist() == [0]


def test_hierarchy_negative_control_exits_1(runner, tmp_path):
    regions = write_box_regions(tmp_path / 'regions.txt', 2, (1, 1), (15, 7))
    result = invoke(runner, tmp_path, 'hierarchy', '--rule', 'chair', '--depth', '4', '--force',
                    '--regions-file', regions, '--ball-trials', '0', '--alpha-scale', '0')
    assert result.exit_code == EXIT_VIOLATION
    rows = pd.read_csv(tmp_path / 'chair_L4_hierarchy.csv', comment='#')
    assert rows['violations'].iloc[0] > 0


def test_flatten_density_file(runner, tmp_path):
    values = (1.0 + np.random.default_rng(7).uniform(0.0, 1.0, (8, 8)))[:4, :4]
    density_frame(values).to_csv(tmp_path / 'rough.csv', index=False)
    config = tmp_path / 'config.yaml'
    config.write_text('flattener:\n  volume_resolution: 16\n  lipschitz_pairs: 10000\n')
    result = runner.invoke(cli, ['-q', '--config', str(config), '-o', str(tmp_path), '--format', 'yaml',
                                 'flatten', '--density', str(tmp_path / 'rough.csv'),
                                 '--roundtrip-points', '1000'])
    assert result.exit_code == 0, result.output
    assert (tmp_path / 'rough_flatten.yaml').exists()
    errors = pd.read_csv(tmp_path / 'rough_volume_errors.csv', comment='#')
    assert list(errors.columns) == ['i', 'j', 'error']
    assert len(errors) == 16


def test_flatten_density_excludes_rule(runner, tmp_path):
    result = invoke(runner, tmp_path, 'flatten', '--density', 'd.csv', '--rule', 'chair')
    assert result.exit_code == EXIT_USAGE


def test_rectify_lattice_points(runner, tmp_path):
    lattice = lattice_points((0, 0, 32, 32), margin=1)
    pd.DataFrame(lattice.points, columns=['x', 'y']).to_csv(tmp_path / 'lattice.csv', index=False)
    result = invoke(runner, tmp_path, 'rectify', '--points', str(tmp_path / 'lattice.csv'),
                    '--window', '0,0,32,32', '--cell', '2', '--m', '4')
    assert result.exit_code == 0, result.output
    with open(tmp_path / 'lattice_rectify.json') as f:
        report = json.load(f)
    assert report['rectify']['rho_hat'] == pytest.approx(1.0)
    matching = pd.read_csv(tmp_path / 'lattice_matching.csv', comment='#')
    assert list(matching.columns) == ['x', 'y', 'z1', 'z2', 'displacement']
    assert matching['displacement'].max() <= 1e-3
