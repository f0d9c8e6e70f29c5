import numpy as np


def test_root_endpoint(client):
    response = client.get("/")
    assert response.status_code == 200
    data = response.json()
    assert data["message"] == "zicount API"
    assert data["status"] == "healthy"


def test_health_endpoint(client):
    response = client.get("/health")
    assert response.status_code == 200
    data = response.json()
    assert data["service"] == "zicount"
    assert data["models"] == ["hnb", "zinb", "tlnpn"]


def test_fit_endpoint(client, sample_counts):
    payload = {"counts": sample_counts.values.tolist(), "model": "hnb",
               "variable_names": list(sample_counts.variable_names)}
    response = client.post("/api/v1/fit", json=payload)
    assert response.status_code == 200
    data = response.json()
    assert (data["n"], data["p"]) == (120, 3)
    assert [v["variable"] for v in data["summary"]["variables"]] == ["otu_a", "otu_b", "otu_c"]


def test_simulate_endpoint(client, sample_counts):
    payload = {"counts": sample_counts.values.tolist(), "model": "tlnpn", "n": 25, "seed": 3,
               "bridge_tol": 1e-4}
    response = client.post("/api/v1/simulate", json=payload)
    assert response.status_code == 200
    rows = np.asarray(response.json()["rows"])
    assert rows.shape == (25, 3)
    again = client.post("/api/v1/simulate", json=payload).json()["rows"]
    np.testing.assert_array_equal(rows, again)


def test_domain_errors_map_to_422(client):
    # a single constant column cannot carry a latent correlation
    counts = [[1, float(i)] for i in range(20)]
    response = client.post("/api/v1/fit", json={"counts": counts, "model": "tlnpn"})
    assert response.status_code == 422
    assert "constant" in response.json()["detail"].lower()


def test_request_validation(client):
    response = client.post("/api/v1/fit", json={"counts": [[1, 2], [3]]})
    assert response.status_code == 422


def test_distance_endpoint(client):
    payload = {"x": [[0, 1], [2, 3]], "y": [[2, 1], [0, 5]], "order": 2,
               "omega_hnb": 2.0, "omega_tlnpn": 1.0}
    response = client.post("/api/v1/distance", json=payload)
    assert response.status_code == 200
    data = response.json()
    assert data["marginal"] == [0.0, np.sqrt(2.0)]
    assert abs(data["amc"] + 2 / 3) < 1e-12


def test_distance_shape_mismatch(client):
    response = client.post("/api/v1/distance", json={"x": [[0, 1]], "y": [[0], [1]]})
    assert response.status_code == 422
