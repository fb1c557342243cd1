import sys
import textwrap

import numpy as np
import pytest

from pumpdown.models import (
    ExternalModelSpec,
    ProtocolError,
    external_predict_batch,
    predict_batch,
    wrap_external,
)

ECHO_MODEL = textwrap.dedent(
    """
    import json, sys
    for line in sys.stdin:
        msg = json.loads(line)
        if msg.get("end") is True:
            print(json.dumps({"end": True}), flush=True)
            continue
        print(json.dumps({"id": msg["id"], "prediction": msg["features"][0]}),
              flush=True)
    """
)

DIES_AFTER_TWO = textwrap.dedent(
    """
    import json, sys
    answered = 0
    for line in sys.stdin:
        msg = json.loads(line)
        if msg.get("end") is True:
            continue
        print(json.dumps({"id": msg["id"], "prediction": 1.0}), flush=True)
        answered += 1
        if answered == 2:
            sys.exit(1)
    """
)

GARBAGE_MODEL = textwrap.dedent(
    """
    import sys
    sys.stdin.readline()
    print("not json at all", flush=True)
    """
)

NAN_MODEL = textwrap.dedent(
    """
    import json, sys
    for line in sys.stdin:
        msg = json.loads(line)
        if msg.get("end") is True:
            print(json.dumps({"end": True}), flush=True)
            continue
        print('{"id": %d, "prediction": NaN}' % msg["id"], flush=True)
    """
)

SLOW_MODEL = textwrap.dedent(
    """
    import sys, time
    sys.stdin.readline()
    time.sleep(30)
    """
)


def model_spec(tmp_path, source, **kwargs):
    script = tmp_path / "model.py"
    script.write_text(source)
    return ExternalModelSpec(argv=(sys.executable, str(script)), **kwargs)


class TestEchoModel:
    def test_smoke(self, tmp_path):
        spec = model_spec(tmp_path, ECHO_MODEL)
        inputs = np.array([[7.0, 1.0, 2.0], [9.0, 0.0, 0.0]])
        out = external_predict_batch(spec, inputs)
        assert np.array_equal(out, [7.0, 9.0])

    def test_2000_inputs_order_preserved(self, tmp_path):
        spec = model_spec(tmp_path, ECHO_MODEL, batch_size=1024)
        inputs = np.arange(2000, dtype=float)[:, None] * np.ones((1, 3))
        out = external_predict_batch(spec, inputs)
        assert out.shape == (2000,)
        assert np.array_equal(out, np.arange(2000, dtype=float))

    def test_wrap_external_predict_batch(self, tmp_path):
        spec = model_spec(tmp_path, ECHO_MODEL)
        model = wrap_external(spec, n_features=3)
        out = predict_batch(model, np.array([[5.0, 0.0, 0.0]]))
        assert out[0] == 5.0


class TestProtocolFailures:
    def test_early_death_raises(self, tmp_path):
        spec = model_spec(tmp_path, DIES_AFTER_TWO)
        inputs = np.ones((5, 2))
        with pytest.raises(ProtocolError, match="missing request id"):
            external_predict_batch(spec, inputs)

    def test_malformed_response_raises(self, tmp_path):
        spec = model_spec(tmp_path, GARBAGE_MODEL)
        with pytest.raises(ProtocolError, match="malformed"):
            external_predict_batch(spec, np.ones((1, 2)))

    def test_non_finite_prediction_raises(self, tmp_path):
        spec = model_spec(tmp_path, NAN_MODEL)
        with pytest.raises(ProtocolError, match="non-finite"):
            external_predict_batch(spec, np.ones((1, 2)))

    def test_timeout_raises(self, tmp_path):
        spec = model_spec(tmp_path, SLOW_MODEL, timeout_s=1.0)
        with pytest.raises(ProtocolError, match="timed out"):
            external_predict_batch(spec, np.ones((1, 2)))

    def test_no_partial_results(self, tmp_path):
        spec = model_spec(tmp_path, DIES_AFTER_TWO)
        try:
            external_predict_batch(spec, np.ones((5, 2)))
        except ProtocolError:
            pass
        else:
            pytest.fail("expected ProtocolError")
