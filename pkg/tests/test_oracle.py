"""Oracle-harness tests: case generation, fine-dt verdicts, agreement math."""

import math

import numpy as np
import pytest

from instinctsim.config import InstinctParams, PHYSICS_DT, RobotParams
from instinctsim.instinct import ObstacleBelief, safety_check
from instinctsim.messages import LowCommand, LowKind, SafetyVerdict, VerdictReason
from instinctsim.oracle import (
    AgreementReport,
    ScenarioCase,
    agreement_report,
    gen_scenario,
    oracle_safety,
)
from instinctsim.world import Pose2D, Rect, WorldModel, clearance

ROBOT = RobotParams()
PARAMS = InstinctParams()


class TestGenScenario:
    def test_same_seed_identical(self):
        a = gen_scenario(42)
        b = gen_scenario(42)
        assert a.world == b.world
        assert a.start == b.start
        assert a.command == b.command
        assert np.array_equal(a.belief.points, b.belief.points)

    def test_generator_contract_over_many_seeds(self):
        for seed in range(300):
            case = gen_scenario(seed)
            n_obstacles = len(case.world.circles) + len(case.world.rects)
            assert 1 <= n_obstacles <= 8, f"seed {seed}"
            assert clearance(case.world, case.start.x, case.start.y) >= 0.5, \
                f"seed {seed}"
            if case.command.kind is LowKind.SET_WHEELS:
                assert abs(case.command.v_left) <= ROBOT.v_wheel_max
                assert abs(case.command.v_right) <= ROBOT.v_wheel_max
                assert case.command.duration_ticks >= 1

    def test_command_mix_includes_stops(self):
        kinds = {gen_scenario(seed).command.kind for seed in range(200)}
        assert LowKind.SET_WHEELS in kinds
        assert LowKind.STOP_ALL in kinds


class TestOracleSafety:
    def test_stop_is_safe(self):
        case = gen_scenario(1)
        stop_case = ScenarioCase(case.seed, case.world, case.start,
                                 LowCommand(1, None, LowKind.STOP_ALL),
                                 case.belief)
        assert oracle_safety(stop_case).safe

    def test_head_on_case_unsafe(self):
        # the oracle is itself the source of this expected value
        belief = ObstacleBelief(points=np.array([[0.30, 0.0]]), built_tick=0)
        case = ScenarioCase(
            seed=0,
            world=WorldModel(bounds=Rect(-4, -4, 4, 4)),
            start=Pose2D(0, 0, 0),
            command=LowCommand(1, None, LowKind.SET_WHEELS, 0.5, 0.5, 200),
            belief=belief,
        )
        v = oracle_safety(case)
        assert not v.safe
        assert v.reason is VerdictReason.OBSTACLE_PREDICTED
        assert v.predicted_min_clearance < PARAMS.d_min
        assert v.predicted_min_clearance == pytest.approx(-0.15, abs=1e-3)

    def test_refinement_stable_off_boundary(self):
        flips = 0
        checked = 0
        for seed in range(120):
            case = gen_scenario(seed)
            coarse = oracle_safety(case, dt_fine=0.002)
            if abs(coarse.predicted_min_clearance - PARAMS.d_min) < 0.02:
                continue
            fine = oracle_safety(case, dt_fine=0.001)
            checked += 1
            if coarse.safe != fine.safe:
                flips += 1
        assert checked > 80
        assert flips == 0


class TestAgreementReport:
    def safe(self, clearance=1.0):
        return SafetyVerdict(True, clearance, VerdictReason.OK)

    def unsafe(self, clearance=0.0):
        return SafetyVerdict(False, clearance, VerdictReason.OBSTACLE_PREDICTED)

    def cases(self, n):
        return [gen_scenario(s) for s in range(n)]

    def test_identical_lists_all_agree(self):
        cases = self.cases(3)
        verdicts = [self.safe(), self.unsafe(), self.safe()]
        rep = agreement_report(cases, verdicts, verdicts)
        assert rep.agreements == rep.total == 3
        assert rep.mismatches == [] and rep.excluded_boundary == 0

    def test_flipped_verdict_counts_once(self):
        cases = self.cases(3)
        checker = [self.safe(), self.safe(1.0), self.safe()]
        oracle = [self.safe(), self.unsafe(0.0), self.safe()]
        rep = agreement_report(cases, checker, oracle)
        assert rep.agreements == 2
        assert rep.mismatches == [cases[1].seed]
        assert rep.false_approvals == 1 and rep.false_refusals == 0

    def test_boundary_band_excluded(self):
        cases = self.cases(1)
        rep = agreement_report(cases, [self.safe(0.205)],
                               [self.unsafe(0.195)])
        assert rep.excluded_boundary == 1
        assert rep.mismatches == [] and rep.agreements == 0
        assert rep.total == rep.agreements + len(rep.mismatches) \
            + rep.excluded_boundary

    def test_conservative_direction_classified(self):
        cases = self.cases(1)
        rep = agreement_report(cases, [self.unsafe(0.1)], [self.safe(0.5)])
        assert rep.false_refusals == 1 and rep.false_approvals == 0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            agreement_report(self.cases(2), [self.safe()], [self.safe()])


class TestCheckerIsNeverOptimistic:
    def test_approved_commands_hold_clearance_under_oracle(self):
        # predictive soundness: an approved SET_WHEELS, replayed against the
        # belief by the fine oracle, keeps d_min - 0.02 of body clearance
        for seed in range(250):
            case = gen_scenario(seed)
            if case.command.kind is not LowKind.SET_WHEELS:
                continue
            verdict = safety_check(case.command, case.start, case.belief,
                                   case.world.bounds, ROBOT, PARAMS, 0,
                                   PHYSICS_DT)
            if not verdict.safe:
                continue
            fine = oracle_safety(case, dt_fine=0.001)
            assert fine.predicted_min_clearance >= PARAMS.d_min - 0.02, \
                f"seed {seed}: approved but oracle sees " \
                f"{fine.predicted_min_clearance:.4f}"
