import pytest
from fastapi.testclient import TestClient

from skdiscourse.annotation import AnnotationStore
from skdiscourse.corpus import Corpus, Post
from skdiscourse.server import create_app, default_codebook


@pytest.fixture()
def store(tmp_path):
    store = AnnotationStore(tmp_path / "annotation")
    store.create_round("round1", ["p1", "p2", "p3"], ["ana", "beto"])
    return store


@pytest.fixture()
def corpus():
    return Corpus(
        [
            Post("p1", "primer texto", "u1", 100),
            Post("p2", "segundo texto", "u2", 200),
            Post("p3", "tercer texto", "u3", 300),
        ]
    )


@pytest.fixture()
def client(store, corpus):
    return TestClient(create_app(store, corpus))


def submit(client, coder, post_id, label, round_id="round1"):
    return client.post(
        f"/rounds/{round_id}/labels",
        json={"coder_id": coder, "post_id": post_id, "label": label},
    )


class TestRounds:
    def test_list_rounds(self, client):
        rounds = client.get("/rounds").json()
        assert len(rounds) == 1
        assert rounds[0]["round_id"] == "round1"
        assert rounds[0]["coders"] == ["ana", "beto"]
        assert rounds[0]["n_posts"] == 3
        assert rounds[0]["progress"] == {"ana": 0, "beto": 0}

    def test_unknown_round_is_404(self, client):
        assert client.get("/rounds/round9/next", params={"coder": "ana"}).status_code == 404


class TestNextPost:
    def test_serves_posts_in_round_order(self, client):
        first = client.get("/rounds/round1/next", params={"coder": "ana"}).json()
        assert first["post_id"] == "p1"
        assert first["text"] == "primer texto"
        assert first["done"] is False
        assert first["n_labeled"] == 0

        submit(client, "ana", "p1", "covert")
        second = client.get("/rounds/round1/next", params={"coder": "ana"}).json()
        assert second["post_id"] == "p2"
        assert second["n_labeled"] == 1

    def test_done_after_all_labeled(self, client):
        for post_id in ("p1", "p2", "p3"):
            submit(client, "ana", post_id, "overt")
        payload = client.get("/rounds/round1/next", params={"coder": "ana"}).json()
        assert payload["done"] is True
        assert "post_id" not in payload

    def test_unassigned_coder_is_403(self, client):
        response = client.get("/rounds/round1/next", params={"coder": "mallory"})
        assert response.status_code == 403

    def test_coder_query_parameter_required(self, client):
        assert client.get("/rounds/round1/next").status_code == 422


class TestSubmitLabel:
    def test_records_label(self, client):
        response = submit(client, "ana", "p1", "covert")
        assert response.status_code == 200
        body = response.json()
        assert body["post_id"] == "p1"
        assert body["coder_id"] == "ana"
        assert body["label"] == "covert"
        assert isinstance(body["labeled_at"], int)

    def test_last_write_wins_but_audit_keeps_both(self, client, store):
        submit(client, "ana", "p1", "covert")
        submit(client, "ana", "p1", "overt")
        rnd = store.get_round("round1")
        assert rnd.current_label("ana", "p1") == "overt"
        assert len(rnd.events) == 2

    def test_unassigned_coder_is_403(self, client):
        assert submit(client, "mallory", "p1", "covert").status_code == 403

    def test_post_outside_round_is_404(self, client):
        assert submit(client, "ana", "p99", "covert").status_code == 404

    def test_invalid_label_is_422(self, client):
        assert submit(client, "ana", "p1", "racist").status_code == 422


class TestKappa:
    def test_no_overlap_is_409(self, client):
        assert client.get("/rounds/round1/kappa").status_code == 409

    def test_agreement_values(self, client):
        # agree on p1/p2, disagree on p3
        for coder in ("ana", "beto"):
            submit(client, coder, "p1", "covert")
            submit(client, coder, "p2", "non_racist")
        submit(client, "ana", "p3", "overt")
        submit(client, "beto", "p3", "covert")
        body = client.get("/rounds/round1/kappa").json()
        assert body["n_items"] == 3
        assert body["observed_agreement"] == pytest.approx(2 / 3)
        assert body["degenerate"] is False
        # po = 2/3, pe = (1/3)*(2/3) + (1/3)*(1/3) + (1/3)*0 = 1/3
        assert body["kappa"] == pytest.approx((2 / 3 - 1 / 3) / (1 - 1 / 3))


class TestDisagreements:
    def test_lists_only_conflicts_with_both_labels(self, client):
        submit(client, "ana", "p1", "covert")
        submit(client, "beto", "p1", "overt")
        submit(client, "ana", "p2", "covert")
        submit(client, "beto", "p2", "covert")
        submit(client, "ana", "p3", "overt")  # beto has not labeled p3
        body = client.get("/rounds/round1/disagreements").json()
        assert len(body) == 1
        assert body[0]["post_id"] == "p1"
        assert body[0]["labels"] == {"ana": "covert", "beto": "overt"}
        assert body[0]["text"] == "primer texto"


class TestCodebook:
    def test_served_per_round(self, client):
        body = client.get("/rounds/round1/codebook").json()
        assert set(body) == {"non_racist", "covert", "overt"}

    def test_default_codebook_has_guidance(self):
        rules = default_codebook()
        for category in ("non_racist", "covert", "overt"):
            assert rules[category]["title"]
            assert rules[category]["rules"]


class TestLabelsCsv:
    def test_export_matches_submissions(self, client):
        submit(client, "ana", "p1", "covert")
        submit(client, "beto", "p2", "overt")
        text = client.get("/rounds/round1/labels.csv").text
        lines = text.strip().splitlines()
        assert lines[0] == "post_id,coder_id,round,label,labeled_at"
        cells = {tuple(line.split(",")[:4]) for line in lines[1:]}
        assert ("p1", "ana", "round1", "covert") in cells
        assert ("p2", "beto", "round1", "overt") in cells


class TestPersistence:
    def test_labels_survive_store_reopen(self, client, store, corpus, tmp_path):
        submit(client, "ana", "p1", "covert")
        submit(client, "ana", "p1", "overt")
        submit(client, "beto", "p2", "non_racist")

        reopened = AnnotationStore(store.directory)
        rnd = reopened.get_round("round1")
        assert rnd.current_label("ana", "p1") == "overt"
        assert rnd.current_label("beto", "p2") == "non_racist"
        assert len(rnd.events) == 3

        # the reopened store serves the same state over HTTP
        client2 = TestClient(create_app(reopened, corpus))
        rounds = client2.get("/rounds").json()
        assert rounds[0]["progress"] == {"ana": 1, "beto": 1}
