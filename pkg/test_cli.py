import json

import numpy as np
import pytest

from fssam.io import write_feature_file, read_feature_file
from fssam.models import FeatureMap, SoftMask
from main import cli_main

SPEC = {
    'height': 16, 'width': 16, 'channels': 8, 'num_classes': 3, 'noise_sigma': 0.1,
    'distractors': 2, 'min_fg_size': 4, 'max_fg_size': 8, 'distractor_size': 4,
    'intra_class_gap': 1.0, 'episodes': 20, 'seed': 17,
}


def write_json(path, data):
    path.write_text(json.dumps(data))
    return str(path)


@pytest.fixture(scope='module')
def episodes_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp('cli')
    spec = write_json(root / 'spec.json', SPEC)
    out = str(root / 'episodes')
    assert cli_main(['gen', '--spec', spec, '--out', out]) == 0
    return out


@pytest.fixture
def single_files(tmp_path):
    mask = np.zeros((6, 6))
    mask[1:4, 2:5] = 1.0
    rng = np.random.default_rng(3)
    feats = np.stack([mask, 1.0 - mask, np.zeros((6, 6))], axis=-1) + 0.05 * rng.standard_normal((6, 6, 3))
    paths = {name: str(tmp_path / f'{name}.fssf') for name in ('query', 'support', 'mask')}
    write_feature_file(paths['query'], FeatureMap(feats))
    write_feature_file(paths['support'], FeatureMap(feats))
    write_feature_file(paths['mask'], SoftMask(mask))
    return paths


def test_eval_prints_and_writes_report(episodes_dir, tmp_path, capsys):
    report = tmp_path / 'eval.json'
    assert cli_main(['eval', '--episodes', episodes_dir, '--report', str(report)]) == 0
    out = capsys.readouterr().out
    assert 'mIoU' in out and 'FB-IoU' in out
    data = json.loads(report.read_text())
    assert data['metrics']['episode_count'] == SPEC['episodes']
    assert 0.0 <= data['metrics']['miou'] <= 1.0
    assert data['config']['imr_iterations'] == 3


def test_eval_reports_are_byte_identical(episodes_dir, tmp_path):
    first, second = tmp_path / 'a.json', tmp_path / 'b.json'
    assert cli_main(['eval', '--episodes', episodes_dir, '--report', str(first)]) == 0
    assert cli_main(['eval', '--episodes', episodes_dir, '--workers', '3', '--report', str(second)]) == 0
    a = json.loads(first.read_text())
    b = json.loads(second.read_text())
    assert a['metrics'] == b['metrics']

    third = tmp_path / 'c.json'
    assert cli_main(['eval', '--episodes', episodes_dir, '--report', str(third)]) == 0
    assert first.read_bytes() == third.read_bytes()


def test_components_do_not_hurt(episodes_dir, tmp_path):
    plain, full = tmp_path / 'plain.json', tmp_path / 'full.json'
    assert cli_main(['eval', '--episodes', episodes_dir, '--head', 'prior', '--no-imr', '--no-scma',
                     '--report', str(plain)]) == 0
    assert cli_main(['eval', '--episodes', episodes_dir, '--head', 'prior', '--report', str(full)]) == 0
    assert (json.loads(full.read_text())['metrics']['miou']
            >= json.loads(plain.read_text())['metrics']['miou'])


def test_stats_show_suppression(episodes_dir, tmp_path, capsys):
    report = tmp_path / 'stats.json'
    assert cli_main(['stats', '--episodes', episodes_dir, '--report', str(report)]) == 0
    assert 'gap_percent' in capsys.readouterr().out
    for layer in json.loads(report.read_text())['suppression']['layers']:
        assert layer['post_mean'] <= layer['pre_mean']


def test_ablate_and_sweep(episodes_dir, tmp_path):
    ablation = tmp_path / 'ablation.json'
    assert cli_main(['ablate', '--episodes', episodes_dir, '--head', 'prior', '--report', str(ablation)]) == 0
    names = [row['name'] for row in json.loads(ablation.read_text())['ablation']['variants']]
    assert names == ['Baseline', 'PPG', 'PPG+IMR', 'PPG+SCMA', 'Full']

    sweep = tmp_path / 'sweep.json'
    assert cli_main(['sweep', '--episodes', episodes_dir, '--iters-list', '0,2', '--head', 'prior',
                     '--report', str(sweep)]) == 0
    assert sorted(json.loads(sweep.read_text())['sweep']) == ['0', '2']


def test_prior_and_refine_outputs(single_files, tmp_path):
    out = tmp_path / 'priors'
    args = ['--query', single_files['query'], '--support', single_files['support'],
            '--mask', single_files['mask'], '--out', str(out)]
    assert cli_main(['prior'] + args) == 0
    for name in ('fg', 'bg', 'disc'):
        assert isinstance(read_feature_file(str(out / f'prior_{name}.fssf')), SoftMask)
        assert (out / f'prior_{name}.pgm').read_bytes().startswith(b'P5\n6 6\n255\n')

    assert cli_main(['refine', '--iters', '2'] + args) == 0
    assert sorted(p.name for p in out.glob('refine_iter_*.fssf')) == [
        'refine_iter_0.fssf', 'refine_iter_1.fssf', 'refine_iter_2.fssf']


def test_unknown_flag_is_usage_error(episodes_dir):
    assert cli_main(['eval', '--episodes', episodes_dir, '--bogus']) == 2
    assert cli_main([]) == 2


def test_missing_files(tmp_path, capsys):
    assert cli_main(['eval', '--episodes', str(tmp_path / 'nowhere')]) == 1
    assert 'missing file' in capsys.readouterr().err
    assert cli_main(['gen', '--spec', str(tmp_path / 'none.json'), '--out', str(tmp_path)]) == 1


def test_config_errors_name_the_problem(episodes_dir, tmp_path, capsys):
    typo = write_json(tmp_path / 'typo.json', {'imr_iteration': 2})
    assert cli_main(['eval', '--episodes', episodes_dir, '--config', typo]) == 1
    assert "imr_iteration" in capsys.readouterr().err

    broken = tmp_path / 'broken.json'
    broken.write_text('{"alpha": ')
    assert cli_main(['eval', '--episodes', episodes_dir, '--config', str(broken)]) == 1
    assert 'invalid JSON' in capsys.readouterr().err

    bad_spec = write_json(tmp_path / 'spec.json', {'max_fg_size': 99})
    assert cli_main(['gen', '--spec', bad_spec, '--out', str(tmp_path / 'x')]) == 1


def test_config_file_and_environment(episodes_dir, tmp_path, monkeypatch):
    config = write_json(tmp_path / 'cfg.json', {'imr_iterations': 1, 'head': 'prior', 'workers': 1})
    monkeypatch.setenv('FSSAM_WORKERS', '2')
    report = tmp_path / 'r.json'
    assert cli_main(['eval', '--episodes', episodes_dir, '--config', config, '--iters', '2',
                     '--report', str(report)]) == 0
    saved = json.loads(report.read_text())['config']
    assert saved['imr_iterations'] == 2
    assert saved['head'] == 'prior'
    assert saved['workers'] == 2

    monkeypatch.setenv('FSSAM_WORKERS', 'lots')
    assert cli_main(['eval', '--episodes', episodes_dir, '--report', str(report)]) == 1


def test_incomplete_meta_is_reported(tmp_path, capsys):
    spec = write_json(tmp_path / 'spec.json', dict(SPEC, episodes=2))
    out = tmp_path / 'episodes'
    assert cli_main(['gen', '--spec', spec, '--out', str(out)]) == 0
    write_json(out / 'episode_0001' / 'meta.json', {'class_id': 0})
    assert cli_main(['eval', '--episodes', str(out)]) == 1
    assert 'meta.json lacks shots' in capsys.readouterr().err
