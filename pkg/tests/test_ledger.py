import math

import pytest

from db import RunRepository, close_db, get_engine, get_session, init_db


@pytest.fixture
def repo(tmp_path):
    url = f"sqlite:///{tmp_path / 'ledger.db'}"
    init_db(url)
    session = get_session(url)
    yield RunRepository(session, batch_size=3)
    session.close()
    close_db()


class TestRunRepository:
    def test_run_lifecycle(self, repo):
        run = repo.create_run('demo', 'so2', 7, 'alpha = 0.1\n')
        assert repo.get_unfinished_runs()[0].id == run.id
        repo.end_run(run.id, 'completed', 0.93)
        finished = repo.get_run(run.id)
        assert finished.stopping_reason == 'completed'
        assert finished.lambda_hat == pytest.approx(0.93)
        assert finished.ended_at is not None
        assert repo.get_unfinished_runs() == []

    def test_list_runs_in_order(self, repo):
        first = repo.create_run('a', 'so2', 0, '')
        second = repo.create_run('b', 'c17', 1, '')
        repo.end_run(first.id, 'variance_floor')
        assert [r.label for r in repo.list_runs()] == ['a', 'b']
        assert [r.id for r in repo.get_unfinished_runs()] == [second.id]

    def test_steps_batched_and_flushed(self, repo):
        run = repo.create_run('demo', 'so2', 0, '')
        for step in range(5):
            repo.add_step(run.id, step, '0.0', 1.0 / (step + 1), n_updated=step)
        # Two rows are still pending after one full batch of three
        assert repo.get_step_count(run.id) == 3
        repo.end_run(run.id, 'completed')
        steps = repo.get_run_steps(run.id)
        assert [s.step for s in steps] == [0, 1, 2, 3, 4]
        assert len(repo.get_run_steps(run.id, limit=2)) == 2

    def test_nan_stored_as_null(self, repo):
        run = repo.create_run('demo', 'so2', 0, '')
        repo.add_step(run.id, 0, '0.0', 0.5, residual=math.nan)
        repo.end_run(run.id, 'completed', math.nan)
        row = repo.get_run_steps(run.id)[0]
        assert row.residual is None
        assert repo.get_run(run.id).lambda_hat is None

    def test_plot_flushes_steps(self, repo):
        run = repo.create_run('demo', 'so2', 0, '')
        repo.add_step(run.id, 0, '0.0', 0.5)
        repo.add_plot(run.id, 'runs/variance.svg')
        assert repo.get_step_count(run.id) == 1
        assert [p.plot_path for p in repo.get_run_plots(run.id)] == ['runs/variance.svg']


class TestConnection:
    def test_missing_url(self, monkeypatch):
        from config import config
        close_db()
        monkeypatch.setattr(config, 'LEDGER_URL', '')
        with pytest.raises(ValueError):
            get_engine()

    def test_url_change_replaces_engine(self, tmp_path):
        first = get_engine(f"sqlite:///{tmp_path / 'a.db'}")
        second = get_engine(f"sqlite:///{tmp_path / 'b.db'}")
        assert first is not second
        close_db()
