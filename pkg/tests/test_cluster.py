from __future__ import annotations

import asyncio
import logging
import math
import threading
import time

import numpy as np
import pytest
from django.core.exceptions import ValidationError
from hypothesis import given, settings as hypothesis_settings, strategies as st

from cluster.control import ControlCommand, parse_command
from cluster.coordinator import ClusterBackend
from cluster.exceptions import ProtocolError, StaleVersion
from cluster.parameter_server import ParameterServer, ps_round
from cluster.protocol import (
    FRAME_HEADER,
    Assign,
    FrameDecoder,
    Heartbeat,
    Hello,
    PullWeights,
    PushGrad,
    Resize,
    Shutdown,
    Weights,
    Welcome,
    decode,
    decode_frame,
    encode,
)
from cluster.scheduler import Scheduler, scheduler_tick
from cluster.schemas import ClusterOptions
from cluster.transport import TcpTransport
from cluster.worker import WorkerCore, run_worker, workload_json
from elastic_engine.runner import run_training
from model_core.datasets import build_dataset
from model_core.objectives import gradient_sum
from model_core.schemas import DatasetSpec, ModelSpec
from optim.rules import sgd_step
from optim.schemas import OptimizerConfig
from optim.updater import ParameterUpdater
from runs.services import build_backend, build_train_run


def _samples():
    rng = np.random.default_rng(0)
    return [
        Hello(worker_id=-1),
        Heartbeat(worker_id=3, seq=17),
        Assign(worker_id=2, epoch=4, iteration=99, version=98, samples=np.arange(10, 20, dtype=np.int64)),
        PushGrad(worker_id=1, iteration=7, version=7, local_batch=16, loss_sum=3.25, grad=rng.normal(size=21)),
        PullWeights(worker_id=5),
        Weights(version=12, payload=rng.normal(size=21)),
        Resize(roster=np.array([0, 2, 5], dtype=np.int32)),
        Shutdown(),
        Welcome(worker_id=0, workload='{"model":"ü"}'),
    ]


def test_heartbeat_frame_layout():
    frame = encode(Heartbeat(worker_id=3, seq=17))
    assert frame == bytes.fromhex("0d000000") + b"\x02" + (3).to_bytes(4, "little") + (17).to_bytes(8, "little")
    assert decode(frame) == Heartbeat(worker_id=3, seq=17)


@pytest.mark.parametrize("message", _samples(), ids=lambda message: type(message).__name__)
def test_every_message_type_survives_the_wire(message):
    frame = encode(message)
    length, tag = FRAME_HEADER.unpack_from(frame)
    assert length == len(frame) - 4
    assert tag == message.TAG
    assert decode(frame) == message


@hypothesis_settings(max_examples=200, deadline=None)
@given(
    worker_id=st.integers(min_value=-(2**31), max_value=2**31 - 1),
    iteration=st.integers(min_value=0, max_value=2**64 - 1),
    local_batch=st.integers(min_value=0, max_value=2**32 - 1),
    loss_sum=st.floats(allow_nan=False, allow_infinity=True),
    grad=st.lists(st.floats(allow_nan=True, allow_infinity=True), max_size=64),
)
def test_push_grad_round_trip(worker_id, iteration, local_batch, loss_sum, grad):
    message = PushGrad(
        worker_id=worker_id,
        iteration=iteration,
        version=iteration,
        local_batch=local_batch,
        loss_sum=loss_sum,
        grad=np.array(grad, dtype=np.float64),
    )
    assert decode(encode(message)) == message


def test_random_and_corrupted_frames_never_crash_the_decoder():
    rng = np.random.default_rng(42)
    valid = [encode(message) for message in _samples()]
    decoded = 0
    for trial in range(100_000):
        if trial % 2:
            frame = bytearray(valid[trial % len(valid)])
            for position in rng.integers(0, len(frame), size=3):
                frame[position] = int(rng.integers(0, 256))
            frame = bytes(frame[: int(rng.integers(0, len(frame) + 1))])
        else:
            frame = rng.bytes(int(rng.integers(0, 40)))
        try:
            decode(frame, max_frame_bytes=1 << 16)
            decoded += 1
        except ProtocolError as exc:
            assert 0 <= exc.offset <= max(len(frame), 5)
    assert decoded > 0


def test_protocol_error_offsets():
    with pytest.raises(ProtocolError) as short_header:
        decode(b"\x05\x00")
    assert short_header.value.offset == 2

    with pytest.raises(ProtocolError) as too_long:
        decode(FRAME_HEADER.pack(100, 2) + bytes(99), max_frame_bytes=64)
    assert too_long.value.offset == 0

    truncated = encode(Heartbeat(worker_id=3, seq=17))[:-3]
    with pytest.raises(ProtocolError) as cut:
        decode(truncated)
    assert cut.value.offset == len(truncated)

    with pytest.raises(ProtocolError) as unknown:
        decode(FRAME_HEADER.pack(1, 99))
    assert unknown.value.offset == 4

    body = encode(Heartbeat(worker_id=3, seq=17))[5:] + b"\x00"
    with pytest.raises(ProtocolError) as trailing:
        decode(FRAME_HEADER.pack(len(body) + 1, Heartbeat.TAG) + body)
    assert trailing.value.offset == 5 + 12

    with pytest.raises(ProtocolError) as shifted:
        decode_frame(FRAME_HEADER.pack(1, 99), base_offset=100)
    assert shifted.value.offset == 104


def test_frame_decoder_handles_byte_by_byte_delivery():
    messages = _samples()
    stream = b"".join(encode(message) for message in messages)
    decoder = FrameDecoder()
    received = []
    for position in range(len(stream)):
        received.extend(decoder.feed(stream[position:position + 1]))
    assert received == messages
    assert decoder.pending == 0
    decoder.close()


def test_frame_decoder_reports_stream_offsets():
    first = encode(Hello(worker_id=1))
    decoder = FrameDecoder()
    with pytest.raises(ProtocolError) as bad_tag:
        decoder.feed(first + FRAME_HEADER.pack(1, 77))
    assert bad_tag.value.offset == len(first) + 4

    partial = FrameDecoder()
    partial.feed(encode(Heartbeat(worker_id=1, seq=2))[:6])
    assert partial.pending == 6
    with pytest.raises(ProtocolError):
        partial.close()


def test_encode_rejects_out_of_range_fields():
    with pytest.raises(ValueError):
        encode(Heartbeat(worker_id=1, seq=-1))


def test_scheduler_assigns_smallest_free_ids():
    scheduler = Scheduler(heartbeat_interval=1.0, miss_limit=3)
    assert [scheduler.admit(0.0) for _ in range(3)] == [0, 1, 2]
    decision = scheduler.commit(0.0)
    assert decision.roster == (0, 1, 2)
    assert decision.joined == (0, 1, 2)
    assert decision.changed

    scheduler.notice_leave(1, 1.0)
    assert scheduler.roster == (0, 1, 2)
    decision = scheduler.commit(1.0)
    assert decision.roster == (0, 2)
    assert decision.left == (1,)
    np.testing.assert_array_equal(decision.resize.roster, [0, 2])

    assert scheduler.admit(2.0) == 1
    assert scheduler.admit(2.0, 7) == 7
    assert scheduler.commit(2.0).roster == (0, 1, 2, 7)
    assert not scheduler.commit(2.5).changed


def test_scheduler_evicts_after_missed_heartbeats():
    scheduler = Scheduler(heartbeat_interval=1.0, miss_limit=3)
    scheduler.admit(0.0)
    scheduler.admit(0.0)
    scheduler.commit(0.0)

    scheduler.heartbeat(0, 3.0)
    assert scheduler.tick(3.0).roster == (0, 1)
    decision = scheduler.tick(3.5)
    assert decision.roster == (0,)
    assert not scheduler.is_live(1)
    assert scheduler.roster == (0, 1)
    assert scheduler.commit(3.5).left == (1,)


def test_scheduler_pauses_when_everyone_leaves():
    scheduler = Scheduler(heartbeat_interval=1.0, miss_limit=3)
    scheduler.admit(0.0)
    scheduler.commit(0.0)
    scheduler.notice_leave(0, 0.5)
    decision = scheduler.commit(0.5)
    assert decision.paused
    assert decision.roster == ()
    scheduler.admit(1.0)
    assert not scheduler.commit(1.0).paused


def test_scheduler_capacity_and_clock():
    scheduler = Scheduler(heartbeat_interval=1.0, miss_limit=3)
    decision = scheduler_tick(scheduler, [("hello", -1), ("hello", -1), ("hello", -1)], 0.0)
    assert decision.roster == (0, 1, 2)
    scheduler.set_capacity(2)
    assert scheduler.commit(0.0).roster == (0, 1)
    with pytest.raises(ValidationError):
        scheduler.tick(-1.0)
    with pytest.raises(ValidationError):
        scheduler_tick(scheduler, [("wave", 0)], 1.0)
    with pytest.raises(ValidationError):
        Scheduler(heartbeat_interval=0.0, miss_limit=3)


def _push(worker_id, grad, *, iteration=0, version=0, batch=4, loss=1.0):
    return PushGrad(
        worker_id=worker_id,
        iteration=iteration,
        version=version,
        local_batch=batch,
        loss_sum=loss,
        grad=np.asarray(grad, dtype=np.float64),
    )


def test_single_worker_round_is_one_sgd_step():
    w0 = np.array([1.0, -2.0, 0.5])
    grad_sum = np.array([4.0, 8.0, -2.0])
    updater = ParameterUpdater(OptimizerConfig(strategy="plain_sgd", base_lr=0.1, base_batch=4), w0)
    ps = ParameterServer(w0)
    ps.open_round(0, [0])
    assert ps.offer(_push(0, grad_sum)) is True

    result = ps.close_round(updater.apply)
    np.testing.assert_array_equal(ps.weights, sgd_step(w0, grad_sum / 4, 0.1))
    assert ps.version == 1
    assert result.broadcast == Weights(version=1, payload=ps.weights)
    assert result.batch == 4


def test_parameter_server_rejects_stale_and_ignores_strangers():
    ps = ParameterServer(np.zeros(2))
    ps.open_round(3, [0, 1])
    with pytest.raises(StaleVersion):
        ps.offer(_push(0, [1.0, 1.0], iteration=3, version=5))
    assert ps.offer(_push(0, [1.0, 1.0], iteration=2)) is False
    assert ps.offer(_push(9, [1.0, 1.0], iteration=3)) is False
    assert ps.offer(_push(1, [1.0, 1.0], iteration=3)) is False
    assert ps.missing == frozenset({0})
    with pytest.raises(ValidationError):
        ps.close_round(lambda grad, batch: None)
    assert ps.version == 0


def test_parameter_server_reduces_in_worker_order():
    updates = []

    def record(grad_sum, batch):
        updates.append((grad_sum, batch))
        return ParameterUpdater(OptimizerConfig(strategy="plain_sgd"), np.zeros(2)).apply(grad_sum, batch)

    pushes = [_push(2, [0.1, 0.2]), _push(0, [0.3, 0.4]), _push(1, [1e16, -1e16])]
    ps_round(ParameterServer(np.zeros(2)), pushes, record)
    ps_round(ParameterServer(np.zeros(2)), sorted(pushes, key=lambda push: push.worker_id), record)
    np.testing.assert_array_equal(updates[0][0], updates[1][0])
    assert updates[0][1] == 12


def test_parse_command():
    assert parse_command("resize 4") == ControlCommand(action="resize", value=4)
    assert parse_command("  PAUSE \n") == ControlCommand(action="pause")
    assert str(parse_command("resize 0")) == "resize 0"
    for line in ["", "resize", "resize -1", "resize two", "jump", "stop now"]:
        with pytest.raises(ValidationError):
            parse_command(line)


def test_worker_core_answers_assignments():
    model = ModelSpec(kind="mlp", input_dim=2, hidden_width=4)
    dataset = DatasetSpec(size=64, seed=2)
    core = WorkerCore()
    assert core.handle(Welcome(worker_id=3, workload=workload_json(model, dataset))) == []
    assert core.handle(Assign(worker_id=3, epoch=0, iteration=0, version=0, samples=np.arange(4))) == [
        PullWeights(worker_id=3)
    ]

    weights = np.linspace(-0.5, 0.5, 22)
    core.handle(Weights(version=0, payload=weights))
    (push,) = core.handle(Assign(worker_id=3, epoch=0, iteration=0, version=0, samples=np.arange(4, 12)))
    expected, loss_sum = gradient_sum(model, weights, build_dataset(dataset), np.arange(4, 12))
    np.testing.assert_array_equal(push.grad, expected)
    assert push.loss_sum == loss_sum
    assert push.local_batch == 8

    core.handle(Shutdown())
    assert core.stopped


def _cluster_config(run_config, **overrides):
    payload = {
        "dataset": {"kind": "blobs", "size": 256, "dim": 2, "seed": 3},
        "execution": "data_parallel",
        "epochs": 10,
    }
    payload.update(overrides)
    return run_config(**payload)


@pytest.mark.parametrize(
    "schedule",
    [{"kind": "static", "n_base": 4}, {"kind": "spike", "n_base": 4, "epoch": 3, "k": 2}],
    ids=["static", "spike"],
)
def test_in_process_cluster_matches_the_simulator_bit_for_bit(run_config, schedule):
    simulated = run_training(build_train_run(_cluster_config(run_config, schedule=schedule)))
    clustered_config = _cluster_config(run_config, schedule=schedule, mode="cluster_inproc")
    clustered = run_training(build_train_run(clustered_config), backend=build_backend(clustered_config))

    assert len(clustered.steps) >= 100
    assert clustered.step_lines() == simulated.step_lines()
    assert clustered.final_weights.tobytes() == simulated.final_weights.tobytes()


def test_dropped_worker_restarts_the_iteration(run_config):
    config = run_config(
        dataset={"kind": "blobs", "size": 256, "dim": 2, "seed": 3},
        schedule={"kind": "static", "n_base": 8},
        epochs=2,
        mode="cluster_inproc",
        records={"samples": True},
        cluster={"events": [{"iteration": 5, "action": "drop", "worker": 3}]},
    )
    record = run_training(build_train_run(config), backend=build_backend(config))

    assert record.steps[5].restarts >= 1
    assert record.steps[5].n_workers == 7
    assert record.steps[4].n_workers == 8
    assert all(step.restarts is None for step in record.steps[:5])
    for epoch in range(2):
        seen = [index for step in record.steps if step.epoch == epoch for index in step.samples]
        assert sorted(seen) == list(range(256))
    assert not record.summary.diverged


def test_operator_stop_ends_the_run(run_config):
    config = run_config(mode="cluster_inproc", cluster={"events": [{"iteration": 3, "action": "stop"}]})
    record = run_training(build_train_run(config), backend=build_backend(config))

    assert record.summary.stopped is True
    assert record.summary.iterations == 3
    assert len(record.events_of("stop")) == 1


def test_empty_roster_waits_for_a_rejoin(run_config, caplog):
    drops = [{"iteration": 5, "action": "drop", "worker": rank} for rank in range(4)]
    config = run_config(
        mode="cluster_inproc",
        epochs=2,
        records={"samples": True},
        cluster={"events": [*drops, {"iteration": 5, "action": "join", "delay": 20}]},
    )
    with caplog.at_level(logging.INFO, logger="cluster"):
        record = run_training(build_train_run(config), backend=build_backend(config))

    assert "Cluster paused: no live workers" in caplog.text
    assert "Roster repopulated workers=1" in caplog.text
    assert record.summary.stopped is False
    assert record.summary.iterations == 16
    assert [step.iter for step in record.steps] == list(range(16))
    assert record.steps[4].n_workers == 4
    assert record.steps[5].n_workers == 1
    assert record.steps[5].restarts >= 1
    assert record.steps[8].n_workers == 4
    for epoch in range(2):
        seen = [index for step in record.steps if step.epoch == epoch for index in step.samples]
        assert sorted(seen) == list(range(128))


def test_empty_roster_halts_after_the_barrier_timeout(run_config):
    drops = [{"iteration": 3, "action": "drop", "worker": rank} for rank in range(4)]
    config = run_config(mode="cluster_inproc", cluster={"events": drops})
    record = run_training(build_train_run(config), backend=build_backend(config))

    assert record.summary.stopped is True
    assert record.summary.iterations == 3
    assert len(record.events_of("stop")) == 1


def test_operator_resize_caps_the_roster(run_config):
    config = run_config(
        mode="cluster_inproc",
        execution="data_parallel",
        cluster={"events": [{"iteration": 2, "action": "resize", "value": 2}]},
    )
    record = run_training(build_train_run(config), backend=build_backend(config))
    assert record.series("n_workers")[:2] == [4, 4]
    assert set(record.series("n_workers")[3:]) == {2}


def test_cluster_options_fall_back_to_settings(settings):
    settings.HEARTBEAT_MISS_LIMIT = 5
    resolved = ClusterOptions(port=0).resolved()
    assert resolved.port == 0
    assert resolved.miss_limit == 5
    assert resolved.control_port == settings.CLUSTER_CONTROL_PORT


@pytest.mark.slow
def test_tcp_cluster_survives_a_dropped_worker(run_config):
    config = run_config(
        batch_policy={"kind": "fixed_total", "value": 24},
        schedule={"kind": "static", "n_base": 3},
        epochs=2,
        execution="data_parallel",
        records={"samples": True},
    )
    options = ClusterOptions(
        host="127.0.0.1",
        port=0,
        control_port=0,
        heartbeat_interval=0.2,
        miss_limit=3,
        barrier_timeout=5.0,
        wait_for_workers=3,
    )
    transport = TcpTransport("127.0.0.1", 0, 0)
    backend = ClusterBackend(transport, options)

    def serve(fail_after):
        deadline = time.monotonic() + 10
        while transport.address is None and time.monotonic() < deadline:
            time.sleep(0.01)
        host, port = transport.address
        asyncio.run(run_worker(host, port, heartbeat_interval=0.2, fail_after=fail_after))

    workers = [threading.Thread(target=serve, args=(fail_after,), daemon=True) for fail_after in (None, None, 4)]
    for worker in workers:
        worker.start()
    record = run_training(build_train_run(config), backend=backend)
    for worker in workers:
        worker.join(timeout=10)

    assert record.summary.iterations == 2 * math.ceil(128 / 24)
    assert not record.summary.diverged
    assert any(step.restarts for step in record.steps)
    assert min(record.series("n_workers")) == 2
    for epoch in range(2):
        seen = [index for step in record.steps if step.epoch == epoch for index in step.samples]
        assert sorted(seen) == list(range(128))
