from __future__ import annotations

import json
import threading

import pytest
from fastapi.testclient import TestClient

from callscope.aggregation import call_record_to_dict
from callscope.backends import OracleBackend
from callscope.context import FULL_HISTORY
from callscope.model import Speaker
from callscope.serialize import conversation_to_dict
from callscope.service.app import ServiceConfig, create_app
from callscope.service.sessions import (
    NoAnnotatedTurns,
    SessionFinalized,
    SessionManager,
    UnknownBackend,
    UnknownSession,
    batch_annotate,
    replay_state,
)
from callscope.service.store import (
    EVENT_ANNOTATION_ADDED,
    EVENT_RECORD_FINALIZED,
    EVENT_SESSION_OPENED,
    EVENT_TURN_ADDED,
    ConversationLog,
    EventStore,
    StoreCorruption,
)
from callscope.simulator import NoiseProfile, ScenarioType, generate_corpus


@pytest.fixture
def manager(tmp_path):
    store = EventStore(tmp_path / "store")
    return SessionManager(store, {"oracle": OracleBackend()})


@pytest.fixture
def sim_call():
    noise = NoiseProfile(0.2, 0.1, 0.15, 0.1)
    return generate_corpus({ScenarioType.PAYMENT_COMMITMENT: 1}, noise, base_seed=55)[0]


class TestEventStore:
    def test_sequence_numbers_dense(self, tmp_path):
        log = ConversationLog(tmp_path / "one.log")
        for i in range(5):
            event = log.append(EVENT_TURN_ADDED, {"turn_index": i})
            assert event.seq == i + 1
        assert [e.seq for e in log.read()] == [1, 2, 3, 4, 5]

    def test_reopen_continues_sequence(self, tmp_path):
        path = tmp_path / "one.log"
        ConversationLog(path).append(EVENT_TURN_ADDED, {"turn_index": 0})
        event = ConversationLog(path).append(EVENT_TURN_ADDED, {"turn_index": 1})
        assert event.seq == 2

    def test_torn_trailing_line_tolerated(self, tmp_path):
        path = tmp_path / "one.log"
        log = ConversationLog(path)
        log.append(EVENT_TURN_ADDED, {"turn_index": 0})
        log.append(EVENT_TURN_ADDED, {"turn_index": 1})
        with open(path, "a", encoding="utf-8") as fh:
            fh.write('{"seq": 3, "ts": "x", "ty')  # crash mid-write
        events = ConversationLog(path).read()
        assert [e.seq for e in events] == [1, 2]

    def test_mid_file_corruption_raises(self, tmp_path):
        path = tmp_path / "one.log"
        log = ConversationLog(path)
        log.append(EVENT_TURN_ADDED, {"turn_index": 0})
        content = path.read_text(encoding="utf-8")
        path.write_text("garbage\n" + content, encoding="utf-8")
        with pytest.raises(StoreCorruption):
            ConversationLog(path).read()

    def test_unsafe_ids_get_distinct_files(self, tmp_path):
        store = EventStore(tmp_path)
        a = store.log_for("weird/id one")
        b = store.log_for("weird/id two")
        assert a.path != b.path


class TestSessionLifecycle:
    def test_open_fresh_session_empty(self, manager):
        state = manager.open_session("s1", "oracle")
        assert state.cursor == 0
        assert not state.finalized

    def test_reopen_same_id_idempotent(self, manager):
        manager.open_session("s1", "oracle")
        manager.push_turn("s1", Speaker.AGENT, "xin chào")
        state = manager.open_session("s1", "oracle")
        assert state.cursor == 1  # same session, no reset

    def test_unknown_backend_named_in_error(self, manager):
        with pytest.raises(UnknownBackend, match="gpt-x"):
            manager.open_session("s1", "gpt-x")

    def test_first_turn_annotated_with_empty_context(self, manager):
        manager.open_session("s1", "oracle")
        record = manager.push_turn("s1", Speaker.AGENT, "Xin chào, em là Lan gọi từ trung tâm ạ.")
        assert record.status == "ok"
        assert record.annotation.call_stage.value == "opening"
        assert record.annotation.slots.agent_name == "Lan"

    def test_push_after_finalize_rejected(self, manager):
        manager.open_session("s1", "oracle")
        manager.push_turn("s1", Speaker.AGENT, "xin chào")
        manager.finalize("s1")
        with pytest.raises(SessionFinalized):
            manager.push_turn("s1", Speaker.CUSTOMER, "vâng")

    def test_finalize_twice_returns_same_record(self, manager):
        manager.open_session("s1", "oracle")
        manager.push_turn("s1", Speaker.AGENT, "xin chào")
        first = manager.finalize("s1")
        second = manager.finalize("s1")
        assert first == second

    def test_finalize_without_annotations_rejected(self, manager):
        manager.open_session("s1", "oracle")
        with pytest.raises(NoAnnotatedTurns):
            manager.finalize("s1")

    def test_unknown_session(self, manager):
        with pytest.raises(UnknownSession):
            manager.get("nope")

    def test_annotations_in_turn_order(self, manager, sim_call):
        manager.open_session("live", "oracle")
        for turn in sim_call.conversation.turns[:8]:
            record = manager.push_turn("live", turn.speaker, turn.text)
            assert record.turn_index == turn.turn_index

    def test_backend_failure_keeps_turn_and_is_retryable(self, tmp_path):
        from callscope.backends.base import BackendUnavailable

        class FlakyOracle(OracleBackend):
            def __init__(self):
                super().__init__(identity="oracle")
                self.fail_next = True

            def complete(self, request):
                if self.fail_next:
                    self.fail_next = False
                    raise BackendUnavailable("endpoint down")
                return super().complete(request)

        manager = SessionManager(EventStore(tmp_path / "store"), {"oracle": FlakyOracle()})
        manager.open_session("flaky", "oracle")
        record = manager.push_turn("flaky", Speaker.AGENT, "xin chào")
        assert record.status == "failed"
        assert "endpoint down" in record.error
        state = manager.get("flaky")
        assert len(state.turns) == 1  # the turn persisted

        retried = manager.retry_annotation("flaky", 0)
        assert retried.status == "ok"
        assert retried.annotation.call_stage.value == "opening"
        # retry is idempotent on an ok annotation
        assert manager.retry_annotation("flaky", 0) == retried


class TestStreamingBatchEquivalence:
    def test_push_turn_equals_batch(self, manager, sim_call):
        conv = sim_call.conversation
        manager.open_session("replay", "oracle")
        streamed = [
            manager.push_turn("replay", t.speaker, t.text).annotation for t in conv.turns
        ]
        streamed_record = manager.finalize("replay")

        batch = batch_annotate([conv], OracleBackend(), FULL_HISTORY)
        assert batch.calls[0].annotations == streamed
        batch_record = batch.calls[0].record
        # identical aggregation modulo the conversation id used for replay
        assert call_record_to_dict(batch_record) == {
            **call_record_to_dict(streamed_record),
            "conversation_id": conv.conversation_id,
        }

    def test_batch_matches_gold_on_simulated_calls(self, sim_call):
        conv = sim_call.conversation
        result = batch_annotate([conv], OracleBackend())
        assert result.gaps == []
        assert result.calls[0].annotations == [t.gold for t in conv.turns]
        assert result.calls[0].record.final_outcome.value == "payment_committed"

    def test_empty_corpus_explicit_zero_manifest(self):
        result = batch_annotate([], OracleBackend())
        assert result.calls == []
        assert result.gaps == []
        assert result.n_turns == 0


class TestCrashSafety:
    def _drive(self, tmp_path, n_turns=6):
        store = EventStore(tmp_path / "store")
        manager = SessionManager(store, {"oracle": OracleBackend()})
        manager.open_session("crashy", "oracle")
        texts = [
            "Xin chào, em là Lan gọi từ trung tâm ạ.",
            "Vâng, tôi nghe đây.",
            "Để xác minh thông tin, có phải anh/chị Hoàng Thu Hà đang nghe máy không ạ?",
            "Vâng, đúng rồi, tôi là Hoàng Thu Hà đây.",
            "Mình cùng trao đổi về phương án thanh toán nhé anh/chị.",
            "Tôi sẽ thanh toán 500.000 đồng vào ngày 15/03/2026.",
        ]
        for i, text in enumerate(texts[:n_turns]):
            manager.push_turn("crashy", Speaker.AGENT if i % 2 == 0 else Speaker.CUSTOMER, text)
        manager.finalize("crashy")
        log = store.log_for("crashy")
        return log.path.read_text(encoding="utf-8").splitlines(), log

    def test_replay_after_any_kill_point_reconstructs_state(self, tmp_path):
        lines, _ = self._drive(tmp_path)
        for k in range(1, len(lines) + 1):
            crash_dir = tmp_path / f"crash-{k}" / "store"
            crash_dir.mkdir(parents=True)
            (crash_dir / "crashy.log").write_text(
                "\n".join(lines[:k]) + "\n", encoding="utf-8"
            )
            recovered = SessionManager(
                EventStore(crash_dir), {"oracle": OracleBackend()}
            ).get("crashy")
            events = ConversationLog(crash_dir / "crashy.log").read()
            expected = replay_state("crashy", events)
            assert recovered.turns == expected.turns
            assert recovered.annotations == expected.annotations
            assert recovered.finalized == expected.finalized
            assert recovered.record == expected.record
            assert recovered.last_seq == k

    def test_replay_with_torn_final_line(self, tmp_path):
        lines, log = self._drive(tmp_path)
        crash_dir = tmp_path / "torn" / "store"
        crash_dir.mkdir(parents=True)
        (crash_dir / "crashy.log").write_text(
            "\n".join(lines[:4]) + "\n" + lines[4][: len(lines[4]) // 2], encoding="utf-8"
        )
        recovered = SessionManager(EventStore(crash_dir), {"oracle": OracleBackend()}).get("crashy")
        assert recovered.last_seq == 4

    def test_restart_resumes_and_can_continue(self, tmp_path):
        store = EventStore(tmp_path / "store")
        manager = SessionManager(store, {"oracle": OracleBackend()})
        manager.open_session("s", "oracle")
        manager.push_turn("s", Speaker.AGENT, "xin chào")
        del manager
        resumed = SessionManager(EventStore(tmp_path / "store"), {"oracle": OracleBackend()})
        state = resumed.get("s")
        assert state.cursor == 1
        record = resumed.push_turn("s", Speaker.CUSTOMER, "vâng, tôi nghe đây")
        assert record.turn_index == 1


class TestConcurrency:
    def test_parallel_sessions_do_not_interleave_state(self, manager):
        ids = [f"par-{i}" for i in range(6)]
        for session_id in ids:
            manager.open_session(session_id, "oracle")

        def drive(session_id):
            for j in range(5):
                manager.push_turn(session_id, Speaker.AGENT, f"turn {j} xin chào")

        threads = [threading.Thread(target=drive, args=(sid,)) for sid in ids]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for session_id in ids:
            state = manager.get(session_id)
            assert [t.turn_index for t in state.turns] == list(range(5))
            assert sorted(state.annotations) == list(range(5))


# ---------------------------------------------------------------------------
# HTTP API
# ---------------------------------------------------------------------------


@pytest.fixture
def client(tmp_path):
    config = ServiceConfig({"store_dir": str(tmp_path / "store")})
    app = create_app(config)
    with TestClient(app) as test_client:
        yield test_client


class TestHttpApi:
    def test_healthz(self, client):
        response = client.get("/v1/healthz")
        assert response.status_code == 200
        assert response.json()["status"] == "ok"

    def test_session_lifecycle_over_http(self, client, sim_call):
        conv = sim_call.conversation
        created = client.post("/v1/sessions", json={"session_id": "h1", "backend": "oracle"})
        assert created.status_code == 200
        assert created.json()["turns"] == []

        for turn in conv.turns:
            response = client.post(
                "/v1/sessions/h1/turns",
                json={"speaker": turn.speaker.value, "text": turn.text},
            )
            assert response.status_code == 200
            body = response.json()
            assert body["status"] == "ok"
            assert body["turn_index"] == turn.turn_index
            assert set(body["annotation"]) == {
                "emotion",
                "sentiment",
                "intent",
                "call_stage",
                "slots",
            }

        finalized = client.post("/v1/sessions/h1/finalize")
        assert finalized.status_code == 200
        assert finalized.json()["final_outcome"] == "payment_committed"

        report = client.get("/v1/reports/h1")
        assert report.status_code == 200
        assert report.json() == finalized.json()

        after = client.post(
            "/v1/sessions/h1/turns", json={"speaker": "customer", "text": "alo"}
        )
        assert after.status_code == 409

    def test_unknown_backend_and_session(self, client):
        bad = client.post("/v1/sessions", json={"session_id": "x", "backend": "nope"})
        assert bad.status_code == 400
        assert "nope" in bad.json()["detail"]
        assert client.get("/v1/sessions/ghost").status_code == 404
        assert client.get("/v1/reports/ghost").status_code == 404

    def test_reopen_idempotent_over_http(self, client):
        client.post("/v1/sessions", json={"session_id": "dup", "backend": "oracle"})
        client.post("/v1/sessions/dup/turns", json={"speaker": "agent", "text": "xin chào"})
        again = client.post("/v1/sessions", json={"session_id": "dup", "backend": "oracle"})
        assert again.status_code == 200
        assert len(again.json()["turns"]) == 1

    def test_batch_endpoint(self, client, sim_call):
        conv = sim_call.conversation
        response = client.post(
            "/v1/batch",
            json={"backend": "oracle", "conversations": [conversation_to_dict(conv)]},
        )
        assert response.status_code == 200
        body = response.json()
        assert body["n_turns"] == len(conv.turns)
        assert body["n_annotated"] == len(conv.turns)
        assert body["gaps"] == []
        assert body["calls"][0]["record"]["final_outcome"] == "payment_committed"

    def test_stream_replays_and_resumes(self, client):
        client.post("/v1/sessions", json={"session_id": "st", "backend": "oracle"})
        client.post("/v1/sessions/st/turns", json={"speaker": "agent", "text": "xin chào"})
        client.post("/v1/sessions/st/turns", json={"speaker": "customer", "text": "vâng"})

        def read_events(after):
            events = []
            with client.stream(
                "GET", f"/v1/sessions/st/stream?after={after}&wait=0"
            ) as response:
                assert response.status_code == 200
                for line in response.iter_lines():
                    if line.startswith("event: "):
                        current = {"event": line[len("event: ") :]}
                    elif line.startswith("id: "):
                        current_id = int(line[len("id: ") :])
                    elif line.startswith("data: "):
                        current["seq"] = current_id
                        current["data"] = json.loads(line[len("data: ") :])
                        events.append(current)
            return events

        # session-opened + 2x(turn-added + annotation-added) = 5 events
        first = read_events(0)
        assert [e["seq"] for e in first] == [1, 2, 3, 4, 5]
        assert first[0]["event"] == EVENT_SESSION_OPENED
        assert first[1]["event"] == EVENT_TURN_ADDED
        assert first[2]["event"] == EVENT_ANNOTATION_ADDED

        client.post("/v1/sessions/st/turns", json={"speaker": "agent", "text": "dạ em nghe ạ"})
        client.post("/v1/sessions/st/finalize")

        # resume from the last confirmed sequence number: no dupes, no gaps
        resumed = read_events(5)
        assert [e["seq"] for e in resumed] == [6, 7, 8]
        assert resumed[-1]["event"] == EVENT_RECORD_FINALIZED

    def test_stream_unknown_session(self, client):
        assert client.get("/v1/sessions/ghost/stream?wait=0").status_code == 404


class TestLiveStreamOverRealServer:
    """Live push delivery needs a real socket: client disconnects and
    concurrent pushes are invisible under the in-process test client."""

    @pytest.fixture
    def live_server(self, tmp_path):
        import socket
        import time

        import httpx
        import uvicorn

        with socket.socket() as probe:
            probe.bind(("127.0.0.1", 0))
            port = probe.getsockname()[1]
        config = ServiceConfig({"store_dir": str(tmp_path / "store"), "port": port})
        server = uvicorn.Server(
            uvicorn.Config(create_app(config), host="127.0.0.1", port=port, log_level="error")
        )
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        base = f"http://127.0.0.1:{port}"
        for _ in range(100):
            try:
                httpx.get(f"{base}/v1/healthz", timeout=1.0)
                break
            except httpx.HTTPError:
                time.sleep(0.05)
        else:
            pytest.fail("server did not start")
        yield base
        server.should_exit = True
        thread.join(timeout=5)

    def test_events_arrive_while_stream_open(self, live_server):
        import httpx

        httpx.post(
            f"{live_server}/v1/sessions",
            json={"session_id": "live", "backend": "oracle"},
            timeout=5.0,
        )

        seen = []
        done = threading.Event()

        def subscribe():
            with httpx.stream(
                "GET", f"{live_server}/v1/sessions/live/stream?after=0", timeout=30.0
            ) as response:
                for line in response.iter_lines():
                    if line.startswith("event: "):
                        seen.append(line[len("event: ") :])
                        if line == f"event: {EVENT_RECORD_FINALIZED}":
                            done.set()
                            return

        reader = threading.Thread(target=subscribe, daemon=True)
        reader.start()
        httpx.post(
            f"{live_server}/v1/sessions/live/turns",
            json={"speaker": "agent", "text": "xin chào"},
            timeout=10.0,
        )
        httpx.post(f"{live_server}/v1/sessions/live/finalize", timeout=10.0)
        assert done.wait(timeout=10), f"saw only {seen}"
        assert seen == [
            EVENT_SESSION_OPENED,
            EVENT_TURN_ADDED,
            EVENT_ANNOTATION_ADDED,
            EVENT_RECORD_FINALIZED,
        ]


class TestAuth:
    def test_token_required_when_configured(self, tmp_path):
        config = ServiceConfig(
            {"store_dir": str(tmp_path / "store"), "auth_token": "hunter2"}
        )
        with TestClient(create_app(config)) as client:
            assert client.get("/v1/healthz").status_code == 200  # health stays open
            denied = client.post(
                "/v1/sessions", json={"session_id": "a", "backend": "oracle"}
            )
            assert denied.status_code == 401
            allowed = client.post(
                "/v1/sessions",
                json={"session_id": "a", "backend": "oracle"},
                headers={"Authorization": "Bearer hunter2"},
            )
            assert allowed.status_code == 200
