import threading
from datetime import datetime, time, timedelta, timezone

import pytest

from bfd import archive, ci
from bfd.ci import CiConfig, CiState, ConfigResult, Configuration
from bfd.errors import CiConfigError

from conftest import sim_project_files

T0 = datetime(2004, 6, 9, 3, 0, tzinfo=timezone.utc)


class FakeClock:
    def __init__(self, start=T0):
        self.now = start

    def __call__(self):
        return self.now

    def advance(self, seconds):
        self.now += timedelta(seconds=seconds)


def passing_builder(calls=None, during=None):
    def builder(config, conf, seqs, build_id):
        if calls is not None:
            calls.append((build_id, conf.name, dict(seqs)))
        if during:
            during(build_id)
        return ConfigResult(conf.name, True, f"logs/{build_id}/{conf.name}.log")
    return builder


@pytest.fixture
def config(tmp_path, store):
    return CiConfig(store_path=store.root, work_dir=tmp_path / "ci", tools_path=tmp_path / "tools")


def commit(store, project="alpha", n=0):
    return archive.archive_commit(store, project, {"f": str(n).encode()}, f"c{n}")


def test_no_commits_no_build(config):
    state = CiState()
    assert ci.ci_poll_once(config, state, passing_builder()) == (False, state)
    assert state.history == []


def test_commit_triggers_one_build(config, store):
    commit(store)
    state = CiState()
    triggered, _ = ci.ci_poll_once(config, state, passing_builder())
    assert triggered
    assert state.history[0].seqs == {"alpha": 1}
    assert state.history[0].trigger == "commit"
    assert ci.ci_poll_once(config, state, passing_builder())[0] is False


def test_commits_during_build_are_coalesced(config, store):
    commit(store, n=0)
    state = CiState()
    calls = []

    def commit_three(build_id):
        if build_id == 1:
            for n in range(1, 4):
                commit(store, n=n)

    builder = passing_builder(calls, commit_three)
    ci.ci_poll_once(config, state, builder)
    ci.ci_poll_once(config, state, builder)
    ci.ci_poll_once(config, state, builder)
    assert len(state.history) == 2
    assert [r.seqs for r in state.history] == [{"alpha": 1}, {"alpha": 4}]


def test_only_one_build_at_a_time(config, store):
    commit(store)
    state = CiState()
    started = threading.Event()
    release = threading.Event()

    def slow(config, conf, seqs, build_id):
        started.set()
        release.wait(5)
        return ConfigResult(conf.name, True, "")

    t = threading.Thread(target=ci.run_build, args=(config, state, "manual", None, slow))
    t.start()
    started.wait(5)
    assert ci.run_build(config, state, "manual", None, passing_builder()) is None
    assert ci.ci_poll_once(config, state, passing_builder())[0] is False
    assert ci.load_state(config.state_path).history == []
    release.set()
    t.join()
    assert len(state.history) == 1


def test_restart_does_not_rebuild(config, store):
    commit(store)
    state = CiState()
    ci.ci_poll_once(config, state, passing_builder())
    restarted = ci.load_state(config.state_path)
    assert restarted.last_built_seq == {"alpha": 1}
    assert ci.ci_poll_once(config, restarted, passing_builder())[0] is False
    assert len(restarted.history) == 1
    assert restarted.next_id == 2


def test_state_roundtrip(config):
    state = CiState(last_built_seq={"a": 3}, schedule_marks={"02:00": T0}, next_id=5)
    state.history.append(ci.BuildRecord(4, "schedule", T0, T0 + timedelta(seconds=3), {"a": 3},
                                        [ConfigResult("x", False, "logs/4/x.log", "r/index.html"),
                                         ConfigResult("y", True, "logs/4/y.log")]))
    state.in_progress = True
    ci.save_state(state, config.state_path)
    back = ci.load_state(config.state_path)
    assert back.history == state.history
    assert back.schedule_marks == state.schedule_marks
    assert back.next_id == 5 and back.last_built_seq == {"a": 3}
    assert back.in_progress is False


def test_schedule_fires_once_per_day_and_not_at_startup(config, store):
    config.schedules = [time(2, 0)]
    commit(store)
    state = CiState(last_built_seq={"alpha": 1})
    clock = FakeClock()
    records = []
    for _ in range(5 * 24 * 4):  # five days in 15-minute ticks
        records += ci.ci_tick(config, state, clock(), passing_builder(), clock)
        clock.advance(15 * 60)
    assert [r.trigger for r in records] == ["schedule"] * 5
    assert [r.started.date() for r in records] == [(T0 + timedelta(days=d)).date() for d in range(1, 6)]


def test_daemon_loop_with_simulated_time(config, store):
    config.schedules = [time(4, 0)]
    config.poll_interval = 600
    commit(store)
    clock = FakeClock()
    state = ci.ci_run_daemon(config, clock=clock, sleep=clock.advance,
                             builder=passing_builder(), max_ticks=3 * 24 * 6)
    triggers = [r.trigger for r in state.history]
    assert triggers == ["commit", "schedule", "schedule", "schedule"]
    restarted = ci.ci_run_daemon(config, clock=clock, sleep=clock.advance,
                                 builder=passing_builder(), max_ticks=5)
    assert len(restarted.history) == 4
    assert (config.work_dir / "board.html").is_file()


def test_daemon_stops_on_event(config):
    stop = threading.Event()
    stop.set()
    state = ci.ci_run_daemon(config, stop=stop, sleep=lambda s: None)
    assert state.history == []


def test_missing_store_skips_poll(tmp_path):
    config = CiConfig(store_path=tmp_path / "gone", work_dir=tmp_path / "ci")
    assert ci.ci_poll_once(config, CiState())[0] is False


def test_status_board_grid(config, store):
    config.configurations = [Configuration("nightly"), Configuration("libs", target="lib")]
    state = CiState()
    assert ci.ci_status_board(state, config) == "configuration\n"
    outcomes = iter([True, False, True, True])

    def builder(config, conf, seqs, build_id):
        return ConfigResult(conf.name, next(outcomes), "")

    for n in range(2):
        commit(store, n=n)
        ci.ci_poll_once(config, state, builder)
    lines = ci.ci_status_board(state, config).splitlines()
    assert [c.strip() for c in lines[0].split("|")] == ["configuration", "#1 commit", "#2 commit"]
    assert [c.strip() for c in lines[1].split("|")] == ["nightly", "pass", "pass"]
    assert [c.strip() for c in lines[2].split("|")] == ["libs", "FAIL", "pass"]
    html = ci.ci_status_board_html(state, config)
    assert html.count('class="fail"') == 1 and html.count('class="pass"') == 3


def test_real_build_configuration(tmp_path, store, config):
    archive.archive_commit(store, "alpha", sim_project_files("alpha", "al"), "good")
    config.configurations = [Configuration("nightly")]
    state = CiState()
    ci.ci_poll_once(config, state)
    rec = state.history[0]
    assert rec.success
    log = (config.work_dir / rec.results[0].log).read_text()
    assert log.rstrip().endswith("BUILD SUCCESSFUL")
    assert "OK (1 tests)" in log
    assert (config.work_dir / rec.results[0].report).is_file()
    assert list((config.work_dir / "scratch").iterdir()) == []


def test_failed_scratch_dirs_are_pruned(store, config):
    config.configurations = [Configuration("nightly")]
    state = CiState()
    for n in range(5):
        archive.archive_commit(store, "alpha", sim_project_files("alpha", "al", tests=b"assert 1 == %d\n" % (n + 2)),
                               f"bad {n}")
        ci.ci_poll_once(config, state)
    assert [r.success for r in state.history] == [False] * 5
    kept = sorted(p.name for p in (config.work_dir / "scratch").iterdir())
    assert kept == ["3-nightly", "4-nightly", "5-nightly"]
    log = (config.work_dir / state.history[-1].results[0].log).read_text()
    assert log.rstrip().endswith("BUILD FAILED")


def test_load_config(tmp_path):
    cfg = tmp_path / "ci.conf"
    cfg.write_text(
        "# comment\n"
        "store: archive\n"
        "projects: alpha beta\n"
        "poll_interval: 10\n"
        "schedule: 02:30\n"
        "configuration: nightly sim test\n"
        "configuration: quick sim compile\n"
    )
    config = ci.load_ci_config(cfg)
    assert config.store_path == tmp_path / "archive"
    assert config.work_dir == tmp_path / "ci"
    assert config.projects == ["alpha", "beta"]
    assert config.poll_interval == 10
    assert config.schedules == [time(2, 30)]
    assert [c.name for c in config.configurations] == ["nightly", "quick"]


@pytest.mark.parametrize("text", [
    "poll_interval: 5\n",
    "store: a\npoll_interval: 0\n",
    "store: a\nschedule: 25:00\n",
    "store: a\nconfiguration: x sim\n",
    "store: a\nconfiguration: x sim deploy\n",
    "store: a\nconfiguration: x sim test\nconfiguration: x sim lib\n",
    "store: a\ncolour: blue\n",
    "store a\n",
])
def test_bad_config(tmp_path, text):
    cfg = tmp_path / "ci.conf"
    cfg.write_text(text)
    with pytest.raises(CiConfigError):
        ci.load_ci_config(cfg)
