import hashlib
import json
import math

import pytest
from sqlalchemy.exc import OperationalError

from config import config
from dataset_io import read_accuracy_csv, read_dataset, read_templates, read_trajectory
from db import RunRepository, close_db, get_session
from main import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_VERIFY, main
from verification import SUITE_FUNCTIONS, SuiteReport


@pytest.fixture(autouse=True)
def no_ledger(monkeypatch):
    monkeypatch.setattr(config, 'LEDGER_URL', '')
    monkeypatch.setattr(config, 'WORKERS', '1')
    monkeypatch.setattr(config, 'LOG_LEVEL', 'WARNING')


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


GENERATE = ['generate', '--classes', '5', '--per-class', '20', '--pose', 'vonmises:0:2', '--seed', '7']


class TestGenerate:
    def test_writes_dataset_and_manifest(self, tmp_path):
        assert main(GENERATE + ['--out', str(tmp_path)]) == EXIT_OK
        _, state = read_dataset(tmp_path / 'dataset.json')
        assert len(state) == 100
        manifest = json.loads((tmp_path / 'dataset.manifest.json').read_text())
        assert manifest['outputs']['dataset.json'] == digest(tmp_path / 'dataset.json')
        assert manifest['seed'] == 7

    def test_same_seed_same_bytes(self, tmp_path):
        (tmp_path / 'a').mkdir()
        (tmp_path / 'b').mkdir()
        main(GENERATE + ['--out', str(tmp_path / 'a')])
        main(GENERATE + ['--out', str(tmp_path / 'b')])
        assert digest(tmp_path / 'a' / 'dataset.json') == digest(tmp_path / 'b' / 'dataset.json')

    def test_missing_output_dir(self, tmp_path):
        assert main(GENERATE + ['--out', str(tmp_path / 'nope')]) == EXIT_IO

    def test_missing_pose(self, tmp_path):
        assert main(['generate', '--classes', '2', '--per-class', '2', '--out', str(tmp_path)]) == EXIT_CONFIG

    def test_bad_manifold(self, tmp_path):
        assert main(GENERATE + ['--manifold', 'so3', '--out', str(tmp_path)]) == EXIT_CONFIG


class TestSimulate:
    def test_oracle_full_update(self, tmp_path, run_config_file):
        assert main(['simulate', '--config', str(run_config_file), '--out', str(tmp_path), '--no-plot']) == EXIT_OK
        manifold, records = read_trajectory(tmp_path / 'trajectory.csv')
        assert manifold.name == 'so2'
        assert [r.step for r in records] == [0, 1]
        assert records[1].sigma2 < 1e-14
        assert records[1].n_updated == 20
        assert not (tmp_path / 'variance.svg').exists()
        manifest = json.loads((tmp_path / 'manifest.json').read_text())
        assert manifest['outputs']['trajectory.csv'] == digest(tmp_path / 'trajectory.csv')
        assert (tmp_path / 'resolved_config.txt').read_text().startswith('manifold = so2')

    def test_plot_written(self, tmp_path, run_config_file):
        args = ['simulate', '--config', str(run_config_file), '--out', str(tmp_path),
                '--set', 'canonicalizer=noisy', '--set', 'alpha=0.2', '--set', 'steps=5']
        assert main(args) == EXIT_OK
        assert (tmp_path / 'variance.svg').exists()

    def test_reproducible(self, tmp_path, run_config_file):
        args = ['--config', str(run_config_file), '--no-plot', '--set', 'canonicalizer=noisy',
                '--set', 'alpha=0.2', '--set', 'steps=4', '--set', 'selection=random']
        for name in ('a', 'b'):
            (tmp_path / name).mkdir()
            assert main(['simulate', *args, '--out', str(tmp_path / name)]) == EXIT_OK
        assert digest(tmp_path / 'a' / 'trajectory.csv') == digest(tmp_path / 'b' / 'trajectory.csv')

    def test_template_run_saves_templates(self, tmp_path, run_config_file):
        args = ['simulate', '--config', str(run_config_file), '--out', str(tmp_path), '--no-plot',
                '--set', 'canonicalizer=template', '--set', 'alpha=0.5', '--set', 'interval=1',
                '--set', 'grid_resolution=16']
        assert main(args) == EXIT_OK
        saved = read_templates(tmp_path / 'templates.json')
        assert saved['variant'] == 'template'
        assert saved['template'] is not None
        assert sorted(saved['class_templates']) == [0, 1]
        manifest = json.loads((tmp_path / 'manifest.json').read_text())
        assert manifest['outputs']['templates.json'] == digest(tmp_path / 'templates.json')

    def test_unknown_key(self, tmp_path, run_config_file):
        args = ['simulate', '--config', str(run_config_file), '--out', str(tmp_path), '--set', 'speed=3']
        assert main(args) == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert main(['simulate', '--config', str(tmp_path / 'none.cfg'), '--out', str(tmp_path)]) == EXIT_IO

    def test_dataset_manifold_mismatch(self, tmp_path, run_config_file):
        main(GENERATE + ['--manifold', 'c17', '--out', str(tmp_path)])
        args = ['simulate', '--config', str(run_config_file), '--out', str(tmp_path),
                '--dataset', str(tmp_path / 'dataset.json')]
        assert main(args) == EXIT_CONFIG

    def test_unknown_dataset_schema(self, tmp_path, run_config_file):
        (tmp_path / 'dataset.json').write_text(json.dumps({'schema': 'dataset/99'}))
        args = ['simulate', '--config', str(run_config_file), '--out', str(tmp_path),
                '--dataset', str(tmp_path / 'dataset.json')]
        assert main(args) == EXIT_IO

    def test_ledger_records_run(self, tmp_path, run_config_file, capsys):
        url = f"sqlite:///{tmp_path / 'ledger.db'}"
        args = ['simulate', '--config', str(run_config_file), '--out', str(tmp_path), '--no-plot',
                '--ledger', url, '--label', 'demo']
        assert main(args) == EXIT_OK
        capsys.readouterr()
        assert main(['ledger', 'runs', '--ledger', url]) == EXIT_OK
        assert 'demo' in capsys.readouterr().out
        assert main(['ledger', 'show', '1', '--ledger', url]) == EXIT_OK
        assert 'Steps (2 of 2)' in capsys.readouterr().out

    def test_ledger_failure_keeps_run_going(self, tmp_path, run_config_file, monkeypatch):
        def broken_flush(repo):
            if repo._pending_steps:
                raise OperationalError('INSERT INTO step_records', {}, Exception('disk I/O error'))

        monkeypatch.setattr(RunRepository, '_flush_pending_steps', broken_flush)
        monkeypatch.setattr(config, 'LEDGER_BATCH_SIZE', 1)
        url = f"sqlite:///{tmp_path / 'ledger.db'}"
        args = ['simulate', '--config', str(run_config_file), '--out', str(tmp_path), '--no-plot', '--ledger', url]
        assert main(args) == EXIT_OK
        _, records = read_trajectory(tmp_path / 'trajectory.csv')
        assert len(records) == 2
        assert (tmp_path / 'manifest.json').exists()
        # The run row was committed before the failure and never ended
        session = get_session(url)
        try:
            assert len(RunRepository(session).get_unfinished_runs()) == 1
        finally:
            session.close()
            close_db()


class TestVerify:
    def test_defs_pass(self, tmp_path):
        assert main(['verify', 'defs', '--out', str(tmp_path)]) == EXIT_OK
        report = json.loads((tmp_path / 'verify_report.json').read_text())
        assert report['passed']
        assert [s['suite'] for s in report['suites']] == ['defs']

    def test_failed_check_exit_code(self, tmp_path, monkeypatch):
        def failing(seed):
            report = SuiteReport('defs')
            report.add('always_fails', False, 1.0, 0.0)
            return report

        monkeypatch.setitem(SUITE_FUNCTIONS, 'defs', failing)
        assert main(['verify', 'defs', '--out', str(tmp_path)]) == EXIT_VERIFY
        report = json.loads((tmp_path / 'verify_report.json').read_text())
        assert not report['passed']
        assert report['suites'][0]['checks'][0]['name'] == 'always_fails'

    def test_unknown_suite(self, tmp_path):
        assert main(['verify', 'lemma9', '--out', str(tmp_path)]) == EXIT_CONFIG


ROBUSTNESS = ['--set', 'canonicalizer=template', '--set', 'grid_resolution=16',
              '--set', 'interval=1', '--set', 'test_per_class=2']


class TestRobustness:
    def test_grid_written(self, tmp_path, run_config_file):
        args = ['robustness', '--config', str(run_config_file), '--out', str(tmp_path), *ROBUSTNESS]
        assert main(args) == EXIT_OK
        rows = read_accuracy_csv(tmp_path / 'robustness.csv')
        # so2 has no scale factor, so only scale 1 is evaluated
        assert len(rows) == 17
        assert {r['scale'] for r in rows} == {1.0}
        assert all(0.0 <= r['canprior_accuracy'] <= 1.0 for r in rows)
        assert all(0.0 <= r['baseline_accuracy'] <= 1.0 for r in rows)
        assert (tmp_path / 'robustness_scale_1.svg').exists()
        manifest = json.loads((tmp_path / 'robustness.manifest.json').read_text())
        assert manifest['cells'] == 17
        assert 'canprior_off_identity_accuracy' in manifest['summary']
        assert manifest['outputs']['templates.json'] == digest(tmp_path / 'templates.json')
        assert sorted(read_templates(tmp_path / 'templates.json')['class_templates']) == [0, 1]

    def test_analytic_canonicalizer_saves_classifier(self, tmp_path, run_config_file):
        args = ['robustness', '--config', str(run_config_file), '--out', str(tmp_path), '--no-plot',
                '--set', 'test_per_class=2']
        assert main(args) == EXIT_OK
        saved = read_templates(tmp_path / 'templates.json')
        assert saved['variant'] == 'oracle'
        assert sorted(saved['class_templates']) == [0, 1]

    def test_saved_templates_reused(self, tmp_path, run_config_file):
        for name in ('trained', 'reused'):
            (tmp_path / name).mkdir()
        base = ['robustness', '--config', str(run_config_file), '--no-plot', *ROBUSTNESS]
        assert main([*base, '--out', str(tmp_path / 'trained')]) == EXIT_OK
        saved = tmp_path / 'trained' / 'templates.json'
        assert main([*base, '--out', str(tmp_path / 'reused'), '--templates', str(saved)]) == EXIT_OK
        trained = read_accuracy_csv(tmp_path / 'trained' / 'robustness.csv')
        reused = read_accuracy_csv(tmp_path / 'reused' / 'robustness.csv')
        assert [r['accuracy'] for r in reused] == [r['accuracy'] for r in trained]

    def test_saved_templates_variant_checked(self, tmp_path, run_config_file):
        base = ['robustness', '--config', str(run_config_file), '--no-plot', '--out', str(tmp_path)]
        assert main([*base, *ROBUSTNESS]) == EXIT_OK
        args = [*base, '--set', 'test_per_class=2', '--templates', str(tmp_path / 'templates.json')]
        assert main(args) == EXIT_CONFIG

    @pytest.mark.slow
    def test_template_beats_identity(self, tmp_path):
        config_path = tmp_path / 'bench.cfg'
        config_path.write_text(
            'manifold = so2\npose = vonmises:0:1\nclasses = 10\nper_class = 50\n'
            'canonicalizer = template\nsteps = 40\nalpha = 0.01\ninterval = 5\nseed = 3\n'
        )
        assert main(['simulate', '--config', str(config_path), '--out', str(tmp_path), '--no-plot']) == EXIT_OK
        _, records = read_trajectory(tmp_path / 'trajectory.csv')
        # The identity canonicalizer never moves a specimen, so its variance stays at records[0]
        assert records[-1].sigma2 < records[0].sigma2
        assert main(['robustness', '--config', str(config_path), '--out', str(tmp_path), '--no-plot']) == EXIT_OK
        summary = json.loads((tmp_path / 'robustness.manifest.json').read_text())['summary']
        assert summary['off_identity_accuracy'] > summary['baseline_off_identity_accuracy']


class TestSweep:
    def test_grid_written(self, tmp_path, run_config_file):
        args = ['sweep', '--config', str(run_config_file), '--out', str(tmp_path), *ROBUSTNESS,
                '--alphas', '0.1,0.5', '--intervals', '1,2']
        assert main(args) == EXIT_OK
        lines = (tmp_path / 'sweep.csv').read_text().splitlines()
        assert lines[0] == '# schema: sweep/1'
        assert [line.split(',')[:2] for line in lines[2:]] == [['1', '0.1'], ['1', '0.5'], ['2', '0.1'], ['2', '0.5']]
        assert (tmp_path / 'sweep.svg').exists()
        manifest = json.loads((tmp_path / 'sweep.manifest.json').read_text())
        assert manifest['outputs']['sweep.csv'] == digest(tmp_path / 'sweep.csv')
        assert manifest['intervals'] == [1, 2]
        assert manifest['best']['alpha'] in (0.1, 0.5)

    @pytest.mark.parametrize('flag, value', [('--alphas', '0.1,x'), ('--alphas', '1.5'), ('--intervals', ''),
                                             ('--intervals', '0')])
    def test_bad_grid(self, tmp_path, run_config_file, flag, value):
        args = ['sweep', '--config', str(run_config_file), '--out', str(tmp_path), '--no-plot', flag, value]
        assert main(args) == EXIT_CONFIG


class TestLedger:
    def test_no_url(self):
        assert main(['ledger', 'runs']) == EXIT_CONFIG

    def test_unknown_run(self, tmp_path):
        assert main(['ledger', 'show', '7', '--ledger', f"sqlite:///{tmp_path / 'ledger.db'}"]) == EXIT_CONFIG


class TestWorkerCount:
    def test_outputs_independent_of_workers(self, tmp_path, run_config_file):
        simulate = ['simulate', '--config', str(run_config_file), '--no-plot', '--set', 'canonicalizer=noisy',
                    '--set', 'alpha=0.2', '--set', 'steps=4', '--set', 'selection=random']
        robustness = ['robustness', '--config', str(run_config_file), '--no-plot', *ROBUSTNESS]
        for workers in ('1', '3'):
            out = tmp_path / workers
            out.mkdir()
            assert main([*simulate, '--workers', workers, '--out', str(out)]) == EXIT_OK
            assert main([*robustness, '--workers', workers, '--out', str(out)]) == EXIT_OK
        for name in ('trajectory.csv', 'manifest.json', 'robustness.csv', 'templates.json', 'robustness.manifest.json'):
            assert digest(tmp_path / '1' / name) == digest(tmp_path / '3' / name), name


class TestFrechet:
    def test_three_points_json(self, tmp_path, capsys):
        poses = tmp_path / 'poses.txt'
        poses.write_text(f'0\n{2 * math.pi / 3!r}\n{4 * math.pi / 3!r}\n')
        assert main(['frechet', str(poses), '--json']) == EXIT_OK
        data = json.loads(capsys.readouterr().out)
        assert data['variance'] == pytest.approx(8 * math.pi ** 2 / 27)
        assert data['n'] == 3

    def test_oracle_agrees(self, tmp_path, capsys):
        poses = tmp_path / 'poses.txt'
        poses.write_text('0.1 1\n0.3 3\n')
        assert main(['frechet', str(poses), '--json', '--oracle']) == EXIT_OK
        data = json.loads(capsys.readouterr().out)
        assert data['mean'][0] == pytest.approx(0.25)
        assert data['oracle_variance'] == pytest.approx(data['variance'], abs=1e-6)

    def test_bad_pose_list(self, tmp_path):
        poses = tmp_path / 'poses.txt'
        poses.write_text('0.1 1\n0.3\n')
        assert main(['frechet', str(poses)]) == EXIT_CONFIG
