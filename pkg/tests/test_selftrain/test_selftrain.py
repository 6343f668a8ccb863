import dataclasses
from unittest import TestCase

from cine_selftrain.errors import (
    FramePredictionError,
    InvalidConfigValue,
    InvalidOperation,
    RoundFailed,
    TrainingError,
)
from cine_selftrain.foundation import (
    CorruptionConfig,
    FoundationSimulator,
    PrecomputedSegmenter,
    simulate_foundation,
)
from cine_selftrain.grid import STRUCTURES, VESSELS
from cine_selftrain.qc import FlagReason
from cine_selftrain.selftrain import (
    SelfTrainConfig,
    SelfTrainMode,
    apply_model,
    initialize_pseudo_labels,
    iteration_report,
    label_set_hash,
    run_self_training,
    select_manual_frames,
    training_pairs,
)
from cine_selftrain.student import StudentModel

from tests.test_selftrain.common import FAST_TRAINING, cohort, truth_map

IDENTITY = CorruptionConfig.identity()


def _config(**kwargs):
    kwargs.setdefault('train_cfg', FAST_TRAINING)
    return SelfTrainConfig(**kwargs)


class _FailingSegmenter:

    def predict(self, image, context):
        if context.frame_index == 1:
            raise RuntimeError('out of memory')
        return FoundationSimulator(truth_map(), IDENTITY).predict(
            image, context
        )


class TestSelfTrainConfig(TestCase):

    def test_invalid_values(self):
        cases = [
            dict(rounds=-1),
            dict(mode='pseudo_mixed', manual_fraction=0.0),
            dict(mode='pseudo_mixed', manual_fraction=1.0),
            dict(seed=-1),
        ]
        for kwargs in cases:
            with self.subTest(**kwargs):
                with self.assertRaises(InvalidConfigValue):
                    SelfTrainConfig(**kwargs)

    def test_mode_from_string(self):
        cfg = SelfTrainConfig(mode='pseudo_mixed')
        self.assertIs(SelfTrainMode.PSEUDO_MIXED, cfg.mode)
        with self.assertRaises(ValueError):
            SelfTrainConfig(mode='supervised')


class TestPseudoLabels(TestCase):

    def test_initialize_replaces_non_manual_labels(self):
        studies = cohort()
        cfg = CorruptionConfig(seed=4)
        labelled = initialize_pseudo_labels(
            studies, FoundationSimulator(truth_map(), cfg)
        )
        for before, after in zip(studies, labelled):
            if before.is_manual:
                self.assertIs(before, after)
            else:
                expected = simulate_foundation(before, cfg)
                self.assertEqual(expected.labels, after.labels)
                self.assertEqual(before.images, after.images)

    def test_failing_frame_is_named(self):
        with self.assertRaises(FramePredictionError) as ctx:
            initialize_pseudo_labels(cohort(), _FailingSegmenter(), threads=2)
        self.assertEqual('subject_000', ctx.exception.subject_id)
        self.assertEqual(1, ctx.exception.frame_index)
        self.assertIn('out of memory', str(ctx.exception))

    def test_apply_model_keeps_manual_studies(self):
        studies = cohort()
        relabelled = apply_model(StudentModel.zeros(), studies, threads=2)
        for before, after in zip(studies, relabelled):
            if before.is_manual:
                self.assertIs(before, after)
            else:
                for labels in after.labels:
                    self.assertFalse(labels.labels.any())


class TestManualMixing(TestCase):

    def test_select_manual_frames(self):
        studies = cohort()
        manual = [s for s in studies if s.is_manual][0]
        cfg = _config(mode='pseudo_mixed', manual_fraction=0.05)
        chosen = select_manual_frames(studies, cfg)
        # 6 pseudo frames at 5% still draw one manual frame
        self.assertEqual(1, len(chosen))
        self.assertIn(chosen[0], manual.frames)
        self.assertEqual(chosen, select_manual_frames(studies, cfg))
        many = dataclasses.replace(cfg, manual_fraction=0.9)
        self.assertEqual(
            list(manual.frames), select_manual_frames(studies, many)
        )

    def test_training_pairs(self):
        studies = cohort()
        pseudo = [f for s in studies if not s.is_manual for f in s.frames]
        self.assertEqual(pseudo, training_pairs(studies, _config()))
        mixed = training_pairs(studies, _config(mode='pseudo_mixed'))
        self.assertEqual(len(pseudo) + 1, len(mixed))
        self.assertEqual(pseudo, mixed[:-1])

    def test_mixed_mode_needs_manual_studies(self):
        studies = [s for s in cohort() if not s.is_manual]
        foundation = FoundationSimulator(truth_map(), IDENTITY)
        with self.assertRaises(InvalidOperation) as ctx:
            run_self_training(
                studies, foundation, _config(mode='pseudo_mixed', rounds=1)
            )
        self.assertIn('is_manual', str(ctx.exception))


class TestIterationReport(TestCase):

    def test_report_on_truth(self):
        studies = cohort()
        report = iteration_report(3, studies, truth_map(), final_loss=0.5)
        self.assertEqual(3, report.iteration)
        self.assertEqual(0.5, report.final_loss)
        self.assertEqual(label_set_hash(studies), report.label_hash)
        # manual studies are left out: 2 subjects x 3 frames
        self.assertEqual(6, len(report.frame_flags))
        self.assertEqual(
            ['subject_000', 'subject_001'],
            [t.subject_id for t in report.temporal],
        )
        self.assertEqual(set(STRUCTURES), set(report.flagged_fractions))
        for s in STRUCTURES:
            self.assertEqual(1.0, report.truth_metrics[s].dice.mean)

    def test_without_truth(self):
        report = iteration_report(1, cohort())
        self.assertIsNone(report.truth_metrics)

    def test_label_hash(self):
        studies = cohort()
        self.assertEqual(label_set_hash(studies), label_set_hash(cohort()))
        emptied = apply_model(StudentModel.zeros(), studies)
        self.assertNotEqual(label_set_hash(studies), label_set_hash(emptied))


class TestRunSelfTraining(TestCase):

    def test_zero_rounds(self):
        foundation = FoundationSimulator(truth_map(), CorruptionConfig())
        result = run_self_training(cohort(), foundation, _config(rounds=0))
        self.assertIsNone(result.model)
        self.assertEqual(1, len(result.reports))
        expected = initialize_pseudo_labels(cohort(), foundation)
        self.assertEqual(
            label_set_hash(expected), result.reports[0].label_hash
        )
        self.assertEqual(
            [s.labels for s in expected], [s.labels for s in result.studies]
        )

    def test_identity_foundation_is_perfect_at_first(self):
        foundation = FoundationSimulator(truth_map(), IDENTITY)
        result = run_self_training(
            cohort(), foundation, _config(rounds=0), truth=truth_map()
        )
        metrics = result.reports[0].truth_metrics
        for s in STRUCTURES:
            with self.subTest(structure=s.label):
                self.assertEqual(1.0, metrics[s].dice.mean)
                self.assertEqual(0.0, metrics[s].hd95.mean)
                self.assertEqual(0.0, metrics[s].assd.mean)

    def test_rounds(self):
        foundation = FoundationSimulator(truth_map(), CorruptionConfig())
        seen = []
        result = run_self_training(
            cohort(),
            foundation,
            _config(rounds=2),
            truth=truth_map(),
            on_report=seen.append,
        )
        self.assertEqual([1, 2, 3], [r.iteration for r in result.reports])
        self.assertNotEqual(
            result.reports[0].label_hash, result.reports[1].label_hash
        )
        self.assertEqual(result.reports, seen)
        self.assertIsNone(result.reports[0].final_loss)
        self.assertEqual(result.model.final_loss, result.reports[-1].final_loss)
        self.assertEqual(
            label_set_hash(result.studies), result.reports[-1].label_hash
        )
        for report in result.reports:
            self.assertIsNotNone(report.truth_metrics)

    def test_manual_labels_never_change(self):
        studies = cohort()
        manual = [s for s in studies if s.is_manual]
        foundation = FoundationSimulator(truth_map(), CorruptionConfig())
        result = run_self_training(
            studies, foundation, _config(rounds=2, mode='pseudo_mixed')
        )
        after = [s for s in result.studies if s.is_manual]
        self.assertEqual(len(manual), len(after))
        for before, now in zip(manual, after):
            self.assertIs(before, now)

    def test_first_iteration_does_not_depend_on_mode(self):
        foundation = FoundationSimulator(truth_map(), CorruptionConfig())
        hashes = []
        for mode in SelfTrainMode:
            result = run_self_training(
                cohort(), foundation, _config(rounds=1, mode=mode)
            )
            hashes.append(result.reports[0].label_hash)
        self.assertEqual(1, len(set(hashes)))

    def test_thread_count_does_not_change_results(self):
        foundation = FoundationSimulator(truth_map(), CorruptionConfig())
        cfg = _config(rounds=1)
        one = run_self_training(cohort(), foundation, cfg, threads=1)
        many = run_self_training(cohort(), foundation, cfg, threads=3)
        self.assertEqual(one.model, many.model)
        self.assertEqual(
            [r.label_hash for r in one.reports],
            [r.label_hash for r in many.reports],
        )

    def test_precomputed_labels_seed_the_loop(self):
        foundation = FoundationSimulator(truth_map(), CorruptionConfig())
        labelled = initialize_pseudo_labels(cohort(), foundation)
        replay = PrecomputedSegmenter({s.subject_id: s for s in labelled})
        a = run_self_training(cohort(), foundation, _config(rounds=1))
        b = run_self_training(cohort(), replay, _config(rounds=1))
        self.assertEqual(a.model, b.model)


class TestFailures(TestCase):

    def test_initialisation_failure(self):
        with self.assertRaises(RoundFailed) as ctx:
            run_self_training(cohort(), _FailingSegmenter(), _config())
        self.assertEqual(1, ctx.exception.iteration)
        self.assertEqual([], ctx.exception.reports)
        self.assertIsInstance(ctx.exception.cause, FramePredictionError)

    def test_failed_labelling_leaves_the_input_untouched(self):
        studies = cohort()
        before = label_set_hash(studies)
        with self.assertRaises(FramePredictionError):
            initialize_pseudo_labels(studies, _FailingSegmenter(), threads=2)
        self.assertEqual(before, label_set_hash(studies))
        with self.assertRaises(RoundFailed):
            run_self_training(studies, _FailingSegmenter(), _config())
        self.assertEqual(before, label_set_hash(studies))
        for given, original in zip(studies, cohort()):
            self.assertIs(original, given)

    def test_round_failure_keeps_earlier_reports(self):
        # with every study manual there is nothing to train on
        studies = [
            dataclasses.replace(s, is_manual=True) for s in cohort()
        ]
        foundation = FoundationSimulator(truth_map(), IDENTITY)
        with self.assertWarns(UserWarning):
            with self.assertRaises(RoundFailed) as ctx:
                run_self_training(studies, foundation, _config(rounds=2))
        self.assertEqual(2, ctx.exception.iteration)
        self.assertIsInstance(ctx.exception.cause, TrainingError)
        self.assertEqual([1], [r.iteration for r in ctx.exception.reports])
        self.assertEqual({}, ctx.exception.reports[0].flagged_fractions)


class TestFlagTrend(TestCase):

    def test_largest_component_student_clears_component_flags(self):
        foundation = FoundationSimulator(
            truth_map(), CorruptionConfig(blob_rate=1.0, swap_rate=0.0)
        )
        training = dataclasses.replace(
            FAST_TRAINING, postprocess_largest_component=True
        )
        result = run_self_training(
            cohort(), foundation, _config(rounds=1, train_cfg=training)
        )
        first, final = result.reports[0], result.reports[-1]
        non_vessels = [s for s in STRUCTURES if s not in VESSELS]
        # every non-vessel label of the foundation carries a detached blob
        for s in non_vessels:
            self.assertEqual(1.0, first.flagged_fractions[s])
        # at most a quarter of a cohort lies more than two stds out
        for s in non_vessels:
            self.assertLessEqual(final.flagged_fractions[s], 0.25)
        for frame in final.frame_flags:
            for r in frame.results:
                self.assertNotIn(FlagReason.MULTI_COMPONENT, r.reasons)
