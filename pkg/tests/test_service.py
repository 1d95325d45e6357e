import pytest
from fastapi.testclient import TestClient

from depthrank.crowd import CrowdStore
from depthrank.sampling import PairQuery
from depthrank.service import create_app


@pytest.fixture
def client(tmp_path):
    store = CrowdStore(p_gold=0.0, seed=1)
    store.create_tasks((f"img{i}", PairQuery((2, 3), (10, 20))) for i in range(3))
    from depthrank.synthetic import render_scene, random_scene, write_image
    img, _ = render_scene(random_scene(16, 16, seed=0))
    write_image(tmp_path / "img_img0.png", img)
    app = create_app(store, images_dir=tmp_path)
    return TestClient(app), store


def register(client):
    resp = client.post("/api/register")
    assert resp.status_code == 200
    body = resp.json()
    assert body["v"] == 1 and body["kind"] == "worker"
    return body["worker"]


def test_task_envelope_contract(client):
    http, store = client
    worker = register(http)
    resp = http.get("/api/task", params={"worker": worker})
    assert resp.status_code == 200
    body = resp.json()
    assert body["v"] == 1 and body["kind"] == "task"
    assert body["image"].startswith("/img/")
    assert body["points"] == [[3, 2], [20, 10]]  # (x, y) display order
    assert body["token"] == f"{body['task']}:{worker}"


def test_unknown_worker_403(client):
    http, _ = client
    assert http.get("/api/task", params={"worker": "nobody"}).status_code == 403


def test_rejected_worker_403(client):
    http, store = client
    worker = register(http)
    store.workers[worker].status = "rejected"
    assert http.get("/api/task", params={"worker": worker}).status_code == 403


def test_no_tasks_204(client):
    http, store = client
    w1, w2 = register(http), register(http)
    for w in (w1, w2):
        while True:
            resp = http.get("/api/task", params={"worker": w})
            if resp.status_code == 204:
                break
            body = resp.json()
            ok = http.post("/api/answer", json={
                "v": 1, "worker": w, "task": body["task"], "choice": 1,
                "response_ms": 1200})
            assert ok.status_code == 200
    w3 = register(http)
    assert http.get("/api/task", params={"worker": w3}).status_code == 204


def test_retry_returns_same_task(client):
    http, _ = client
    worker = register(http)
    first = http.get("/api/task", params={"worker": worker}).json()
    second = http.get("/api/task", params={"worker": worker}).json()
    assert first["task"] == second["task"]


def test_answer_flow_and_duplicate_409(client):
    http, store = client
    worker = register(http)
    task = http.get("/api/task", params={"worker": worker}).json()["task"]
    body = {"v": 1, "worker": worker, "task": task, "choice": 2, "response_ms": 900}
    first = http.post("/api/answer", json=body)
    assert first.status_code == 200
    assert first.json()["kind"] == "ack"
    assert http.post("/api/answer", json=body).status_code == 409


def test_unserved_answer_409(client):
    http, store = client
    worker = register(http)
    assert http.post("/api/answer", json={
        "v": 1, "worker": worker, "task": next(iter(store.tasks)), "choice": 1,
        "response_ms": 10}).status_code == 409


def test_malformed_choice_400(client):
    http, _ = client
    worker = register(http)
    task = http.get("/api/task", params={"worker": worker}).json()["task"]
    for choice in (0, 4, "1", None):
        resp = http.post("/api/answer", json={
            "v": 1, "worker": worker, "task": task, "choice": choice,
            "response_ms": 10})
        assert resp.status_code == 400
    assert http.post("/api/answer", content=b"not json").status_code == 400


def test_bad_token_400(client):
    http, _ = client
    worker = register(http)
    envelope = http.get("/api/task", params={"worker": worker}).json()
    resp = http.post("/api/answer", json={
        "v": 1, "worker": worker, "task": envelope["task"], "choice": 1,
        "response_ms": 5, "token": "wrong:token"})
    assert resp.status_code == 400


def test_response_time_recorded(client):
    http, store = client
    worker = register(http)
    task = http.get("/api/task", params={"worker": worker}).json()["task"]
    http.post("/api/answer", json={"v": 1, "worker": worker, "task": task,
                                   "choice": 1, "response_ms": 3400})
    assert store.tasks[task].answers[0].response_ms == 3400


def test_stats_endpoint(client):
    http, store = client
    resp = http.get("/api/stats")
    assert resp.status_code == 200
    body = resp.json()
    assert body["kind"] == "stats"
    assert body["tasks"] == 3


def test_image_endpoint(client):
    http, _ = client
    good = http.get("/img/img0")
    assert good.status_code == 200
    assert good.headers["content-type"] == "image/png"
    assert http.get("/img/missing").status_code == 404


def test_server_semantics_match_store(client):
    # The facade adds no semantics: the same scripted interaction through
    # the store directly yields the same states.
    http, store = client
    w1, w2 = register(http), register(http)
    t1 = http.get("/api/task", params={"worker": w1}).json()["task"]
    t2 = http.get("/api/task", params={"worker": w2}).json()["task"]
    assert t1 == t2
    http.post("/api/answer", json={"v": 1, "worker": w1, "task": t1, "choice": 1,
                                   "response_ms": 5})
    http.post("/api/answer", json={"v": 1, "worker": w2, "task": t2, "choice": 1,
                                   "response_ms": 7})
    assert store.tasks[t1].state == "accepted"
    assert store.tasks[t1].accepted_relation == 1
