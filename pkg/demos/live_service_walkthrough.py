"""Drive the live experiment service end to end with a scripted participant.

Starts the session API in process, creates a 5-step adaptive session, answers
each two-face comparison with a simulated participant, and prints the
posterior summary after every answer.  The same loop a browser participant
would produce, minus the browser.
"""

import numpy as np
from fastapi.testclient import TestClient

from veig.design_loop import SimulatedResponder
from veig.estimators import EstimatorSpec
from veig.models import make_model
from veig.rng import RngStream
from veig.service import SessionStore, create_app


def main():
    store = SessionStore(
        spec=EstimatorSpec(kind="ml", n_outer=150, n_steps=80), vi_steps=250
    )
    client = TestClient(create_app(store))
    model = make_model("mixed_effects")
    theta_true = np.array([-30.0, 30.0, 0.0, -12.0, -6.0, 18.0])
    agent = SimulatedResponder(model, theta_true, RngStream(3, 1))

    created = client.post(
        "/v1/sessions",
        json={"scenario": "mixed_effects", "steps": 5, "strategy": "oed", "seed": 3},
    ).json()
    sid = created["session_id"]
    print(f"session {sid}: {created['of']} adaptive questions\n")
    for t in range(1, 6):
        nxt = client.get(f"/v1/sessions/{sid}/next").json()
        left, right = nxt["stimulus"]["left"]["image"], nxt["stimulus"]["right"]["image"]
        answer = agent((left, right))
        res = client.post(
            f"/v1/sessions/{sid}/response", json={"step": t, "value": answer}
        ).json()
        print(
            f"q{t}: faces {left} vs {right} -> slider {answer:.3f} "
            f"(fixed-effects entropy {res['entropy']:.3f})"
        )
    posterior = client.get(f"/v1/sessions/{sid}/posterior").json()
    print(f"\nfinal status: {posterior['status']}")
    print("entropy history:", " ".join(f"{e:.2f}" for e in posterior["entropy_history"]))


if __name__ == "__main__":
    main()
