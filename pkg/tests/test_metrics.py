import pytest

from cbdebias.errors import DataError
from cbdebias.metrics import (
    PredictionRecord,
    bias_report,
    bias_report_to_dict,
    error_rates,
    load_predictions_csv,
    record_from_prob,
    save_predictions_csv,
    soft_error_rates,
    word_bias,
)

WORDS = tuple(f"sw{i}" for i in range(20))


def rec(sid, gold, pred, prob=None, swears=()):
    if prob is None:
        prob = 0.9 if pred == 1 else 0.1
    return PredictionRecord(session_id=sid, gold=gold, predicted=pred,
                            prob_positive=prob, swears=frozenset(swears))


def random_records(rng, size, n_words):
    words = WORDS[:n_words]
    records = []
    for i in range(size):
        gold = int(rng.integers(0, 2))
        prob = float(rng.random())
        swears = [w for w in words if rng.random() < 0.25]
        records.append(record_from_prob(f"r{i}", gold, prob, swears))
    return records


# --- independent counting oracle ---

def oracle_rates(records):
    fp = sum(1 for r in records if r.gold == 0 and r.predicted == 1)
    tn = sum(1 for r in records if r.gold == 0 and r.predicted == 0)
    fn = sum(1 for r in records if r.gold == 1 and r.predicted == 0)
    tp = sum(1 for r in records if r.gold == 1 and r.predicted == 1)
    fpr = fp / (fp + tn) if fp + tn > 0 else None
    fnr = fn / (fn + tp) if fn + tp > 0 else None
    return fpr, fnr


def oracle_report(records, words):
    fpr, fnr = oracle_rates(records)
    fped = 0.0
    fned = 0.0
    per_word = {}
    for w in words:
        subset = [r for r in records if w in r.swears]
        if not subset:
            continue
        sub_fpr, sub_fnr = oracle_rates(subset)
        fprd = fnrd = None
        if fpr is not None and sub_fpr is not None:
            fprd = abs(fpr - sub_fpr)
            fped += fprd
        if fnr is not None and sub_fnr is not None:
            fnrd = abs(fnr - sub_fnr)
            fned += fnrd
        per_word[w] = (fprd, fnrd)
    return fpr, fnr, per_word, fped, fned


class TestErrorRates:
    def test_direct_arithmetic(self):
        records = [rec("a", 0, 1), rec("b", 0, 0), rec("c", 0, 0), rec("d", 1, 1)]
        rates = error_rates(records)
        assert rates.fpr == pytest.approx(1 / 3)
        assert rates.fnr == 0.0

    def test_all_correct(self):
        records = [rec("a", 0, 0), rec("b", 1, 1)]
        rates = error_rates(records)
        assert rates.fpr == 0.0 and rates.fnr == 0.0

    def test_undefined_rates(self):
        rates = error_rates([rec("a", 1, 1), rec("b", 1, 0)])
        assert rates.fpr is None
        assert rates.fnr == 0.5

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            error_rates([])

    def test_recount_oracle_exact(self, rng):
        for _ in range(200):
            records = random_records(rng, int(rng.integers(5, 80)), 5)
            rates = error_rates(records)
            assert (rates.fpr, rates.fnr) == oracle_rates(records)


class TestWordBias:
    def test_hand_count(self):
        # global: FP=1, TN=3 -> FPR=0.25; subset with word: FP=1, TN=1 -> 0.5
        records = [
            rec("a", 0, 1, swears=("w",)), rec("b", 0, 0, swears=("w",)),
            rec("c", 0, 0), rec("d", 0, 0), rec("e", 1, 1),
        ]
        wb = word_bias(records, "w")
        assert wb.fprd == pytest.approx(abs(0.25 - 0.5))

    def test_subset_equals_global_gives_zero(self):
        records = [
            rec("a", 0, 1, swears=("w",)), rec("b", 0, 0, swears=("w",)),
            rec("c", 0, 1), rec("d", 0, 0),
            rec("e", 1, 0, swears=("w",)), rec("f", 1, 1, swears=("w",)),
            rec("g", 1, 0), rec("h", 1, 1),
        ]
        wb = word_bias(records, "w")
        assert wb.fprd == 0.0 and wb.fnrd == 0.0

    def test_word_only_in_positives_skips_fprd(self):
        records = [rec("a", 1, 1, swears=("w",)), rec("b", 1, 0, swears=("w",)),
                   rec("c", 0, 0), rec("d", 1, 0)]
        wb = word_bias(records, "w")
        assert wb.fprd is None
        assert wb.fnrd is not None
        assert any("gold-negative" in reason for reason in wb.skipped)

    def test_absent_word_skipped(self):
        records = [rec("a", 0, 0), rec("b", 1, 1)]
        wb = word_bias(records, "w")
        assert wb.fprd is None and wb.fnrd is None
        assert wb.skipped == ("phrase absent from all records",)


class TestBiasReport:
    def test_fairness_fixed_point(self):
        records = [
            rec("a", 0, 1, swears=("w1", "w2")), rec("b", 0, 0, swears=("w1", "w2")),
            rec("c", 0, 1), rec("d", 0, 0),
            rec("e", 1, 1, swears=("w1", "w2")), rec("f", 1, 0, swears=("w1", "w2")),
            rec("g", 1, 1), rec("h", 1, 0),
        ]
        report = bias_report(records, ("w1", "w2"))
        assert report.fped == 0.0 and report.fned == 0.0

    def test_hand_sum(self):
        # crafted so per-word fprd = {0.25, 0.1, 0.0} around global FPR 0.25
        records = []
        records += [rec(f"a{i}", 0, 1 if i < 2 else 0, swears=("sw0",))
                    for i in range(4)]    # subset FPR 0.5
        records += [rec(f"b{i}", 0, 1 if i < 7 else 0, swears=("sw1",))
                    for i in range(20)]   # subset FPR 0.35
        records += [rec(f"c{i}", 0, 1 if i < 1 else 0, swears=("sw2",))
                    for i in range(4)]    # subset FPR 0.25
        records += [rec(f"f{i}", 0, 0) for i in range(12)]  # global FPR -> 0.25
        report = bias_report(records, ("sw0", "sw1", "sw2"))
        assert report.fpr == 0.25
        assert report.per_word["sw0"].fprd == pytest.approx(0.25, abs=1e-12)
        assert report.per_word["sw1"].fprd == pytest.approx(0.1, abs=1e-12)
        assert report.per_word["sw2"].fprd == 0.0
        assert report.fped == pytest.approx(0.35, abs=1e-12)

    def test_sorted_descending_by_fprd(self, rng):
        records = random_records(rng, 120, 8)
        report = bias_report(records, WORDS[:8])
        fprds = [b.fprd for b in report.per_word.values() if b.fprd is not None]
        assert fprds == sorted(fprds, reverse=True)

    def test_oracle_equivalence_sweep(self, rng):
        for _ in range(200):
            records = random_records(rng, int(rng.integers(10, 100)),
                                     int(rng.integers(1, 10)))
            words = WORDS[:10]
            report = bias_report(records, words)
            fpr, fnr, per_word, fped, fned = oracle_report(records, words)
            assert report.fpr == fpr and report.fnr == fnr
            assert abs(report.fped - fped) <= 1e-12
            assert abs(report.fned - fned) <= 1e-12
            for w, (fprd, fnrd) in per_word.items():
                assert report.per_word[w].fprd == fprd
                assert report.per_word[w].fnrd == fnrd

    def test_monotone_in_word_set(self, rng):
        records = random_records(rng, 80, 10)
        prev_fped = prev_fned = 0.0
        for k in range(1, 11):
            report = bias_report(records, WORDS[:k])
            assert report.fped >= prev_fped - 1e-15
            assert report.fned >= prev_fned - 1e-15
            prev_fped, prev_fned = report.fped, report.fned

    def test_label_prob_flip_swaps_rates(self, rng):
        records = random_records(rng, 60, 4)
        flipped = [PredictionRecord(r.session_id, 1 - r.gold, 1 - r.predicted,
                                    1.0 - r.prob_positive, r.swears)
                   for r in records]
        a = error_rates(records)
        b = error_rates(flipped)
        assert a.fpr == b.fnr and a.fnr == b.fpr

    def test_report_dict_stable(self, rng):
        records = random_records(rng, 40, 4)
        d = bias_report_to_dict(bias_report(records, WORDS[:4]))
        assert list(d)[:4] == ["threshold", "fpr", "fnr", "fped"]


class TestSoftErrorRates:
    def test_hard_probs_equal_exact(self, rng):
        for _ in range(100):
            records = []
            for i in range(int(rng.integers(4, 60))):
                gold = int(rng.integers(0, 2))
                pred = int(rng.integers(0, 2))
                records.append(rec(f"r{i}", gold, pred, prob=float(pred)))
            soft = soft_error_rates(records)
            exact = error_rates(records)
            if exact.fpr is None:
                assert soft.soft_fpr is None
            else:
                assert abs(soft.soft_fpr - exact.fpr) <= 1e-12
            if exact.fnr is None:
                assert soft.soft_fnr is None
            else:
                assert abs(soft.soft_fnr - exact.fnr) <= 1e-12

    def test_mean_definition(self):
        records = [rec("a", 0, 0, prob=0.2), rec("b", 0, 0, prob=0.4),
                   rec("c", 1, 1, prob=0.9)]
        soft = soft_error_rates(records)
        assert soft.soft_fpr == pytest.approx(0.3)
        assert soft.soft_fnr == pytest.approx(0.1)

    def test_continuity_near_boundary(self):
        base = [rec("a", 0, 0, prob=0.0), rec("b", 1, 1, prob=1.0)]
        nudged = [rec("a", 0, 0, prob=1e-9), rec("b", 1, 1, prob=1.0 - 1e-9)]
        a, b = soft_error_rates(base), soft_error_rates(nudged)
        assert abs(a.soft_fpr - b.soft_fpr) < 1e-8
        assert abs(a.soft_fnr - b.soft_fnr) < 1e-8


class TestPredictionsCsv:
    def test_round_trip(self, tmp_path, rng):
        records = random_records(rng, 30, 5)
        path = tmp_path / "p.csv"
        save_predictions_csv(records, path)
        loaded = load_predictions_csv(path)
        assert loaded == records

    def test_malformed_row_names_line(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("id,gold,pred,prob,swears\na,0,0,0.1,\nb,zz,0,0.1,\n")
        with pytest.raises(DataError, match="line 3"):
            load_predictions_csv(path)

    def test_threshold_consistency_enforced(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("id,gold,pred,prob,swears\na,0,0,0.9,\n")
        with pytest.raises(DataError, match="inconsistent"):
            load_predictions_csv(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("id,gold\n")
        with pytest.raises(DataError, match="header"):
            load_predictions_csv(path)

    def test_record_validation(self):
        with pytest.raises(DataError):
            PredictionRecord("a", 2, 0, 0.5)
        with pytest.raises(DataError):
            PredictionRecord("a", 0, 0, 1.5)
