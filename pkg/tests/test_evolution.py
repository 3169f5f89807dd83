import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from masharness.broker import Broker, QueueClosed
from masharness.evolution import (
    DEFAULT_ENERGY_TARGET,
    FitnessReport,
    GAConfig,
    GenerationStats,
    Genome,
    MetricsOutOfRange,
    evaluate_solution,
    evolve_generation,
    fitness,
    initial_population,
    load_ga_config,
    pick_elites,
    run_observer,
    tournament_select,
)
from masharness.logmodel import parse_binding_pattern
from masharness.neural import NetworkTopology
from masharness.testkit import MachineStatus, TestCase, TransitionSpec, compile, run
from masharness.world import EpisodeMetrics, InvalidConfig, WorldConfig


def metrics(people=1.0, trip=0.0, energy=0.0):
    return EpisodeMetrics(pPeople=people, pTrip=trip, pEnergy=energy)


def scored(values):
    return [Genome(genes=(float(i),), fitness=v) for i, v in enumerate(values)]


def drain_actions(queue):
    actions = []
    while True:
        try:
            ev = queue.consume(0.0)
        except QueueClosed:
            return actions
        if ev is None:
            return actions
        actions.append(ev.action)


ALWAYS_ON_GENES = [0.0] * 24 + [5.0, 0.0]  # output bias drives the lamp on


class TestFitness:
    def test_perfect_run_scores_one(self):
        report = fitness(metrics(1.0, 0.0, 0.0))
        assert report.fitness == 1.0
        assert report.energyTargetMet is True
        assert report.peopleTargetMet is True

    def test_worst_run_scores_minus_one(self):
        report = fitness(metrics(0.0, 1.0, 1.0))
        assert report.fitness == -1.0
        assert report.energyTargetMet is False
        assert report.peopleTargetMet is False

    def test_weighted_example(self):
        report = fitness(metrics(1.0, 0.5, 0.69))
        assert report.fitness == pytest.approx(0.424, abs=1e-12)
        assert report.energyTargetMet is True  # 0.69 < 0.70
        assert report.peopleTargetMet is True

    def test_energy_target_boundary_is_strict(self):
        assert fitness(metrics(energy=0.70)).energyTargetMet is False
        assert fitness(metrics(energy=0.6999999)).energyTargetMet is True
        assert fitness(metrics(energy=0.70), energy_target=0.75).energyTargetMet is True

    def test_people_target_requires_everyone(self):
        assert fitness(metrics(people=0.999999)).peopleTargetMet is False
        assert fitness(metrics(people=1.0)).peopleTargetMet is True

    @pytest.mark.parametrize(
        "bad",
        [
            metrics(people=1.5),
            metrics(people=-0.1),
            metrics(trip=1.01),
            metrics(energy=2.0),
            metrics(energy=-1e-9),
        ],
    )
    def test_rejects_out_of_range_metrics(self, bad):
        with pytest.raises(MetricsOutOfRange):
            fitness(bad)

    @given(
        people=st.floats(0.0, 1.0),
        trip=st.floats(0.0, 1.0),
        energy=st.floats(0.0, 1.0),
    )
    @settings(max_examples=300)
    def test_score_matches_weighted_sum_to_one_ulp(self, people, trip, energy):
        report = fitness(metrics(people, trip, energy))
        expected = 1.0 * people - 0.6 * trip - 0.4 * energy
        assert abs(report.fitness - expected) <= math.ulp(max(abs(expected), 1.0))

    @pytest.mark.parametrize(
        "m,achieved",
        [
            (metrics(1.0, 0.0, 0.5), ["achieveEnergyTarget", "achievePeopleTarget"]),
            (metrics(0.5, 0.0, 0.5), ["achieveEnergyTarget"]),
            (metrics(1.0, 0.0, 0.9), ["achievePeopleTarget"]),
            (metrics(0.5, 0.0, 0.9), []),
        ],
    )
    def test_log_protocol_reports_only_met_targets(self, m, achieved):
        with Broker() as broker:
            queue = broker.declare_queue("obs", ["OBSERVER.#"])
            fitness(m, publisher=broker.publisher("OBSERVER", "observer01"))
            broker.close()
            actions = drain_actions(queue)
        assert actions == (
            ["calculateEnergy", "calculatePeople", "calculateTripDuration"]
            + achieved
            + ["calculateFitness"]
        )


class TestGAConfig:
    def test_defaults(self):
        c = GAConfig()
        assert (c.populationSize, c.generations, c.elitism, c.tournamentSize) == (40, 30, 2, 3)
        assert (c.crossoverRate, c.mutationRate) == (0.8, 0.05)
        assert c.energyTarget == DEFAULT_ENERGY_TARGET

    @pytest.mark.parametrize(
        "kw",
        [
            dict(populationSize=0),
            dict(generations=-1),
            dict(elitism=0),
            dict(elitism=40),
            dict(populationSize=1, elitism=2),
            dict(tournamentSize=0),
            dict(crossoverRate=1.5),
            dict(mutationRate=-0.1),
            dict(mutationSigma=-1.0),
            dict(weightLimit=0.0),
            dict(hiddenCount=0),
            dict(energyTarget=0.0),
            dict(energyTarget=1.5),
        ],
    )
    def test_rejects_bad_values(self, kw):
        with pytest.raises(InvalidConfig):
            GAConfig(**kw)

    def test_single_member_population_is_allowed(self):
        c = GAConfig(populationSize=1, elitism=1)
        assert c.populationSize == 1

    def test_load_round_trip(self, tmp_path):
        path = tmp_path / "ga.cfg"
        path.write_text(
            "# learning knobs\n"
            "populationSize = 8\n"
            "generations = 3\n"
            "mutationSigma = 0.5\n"
        )
        c = load_ga_config(path)
        assert (c.populationSize, c.generations) == (8, 3)
        assert c.mutationSigma == 0.5
        assert c.elitism == 2  # defaults survive partial files

    def test_load_errors_carry_line_numbers(self, tmp_path):
        path = tmp_path / "ga.cfg"
        path.write_text("populationSize = 8\nvibe = high\n")
        with pytest.raises(InvalidConfig, match="line 2"):
            load_ga_config(path)


class TestOperators:
    def test_initial_population_is_seeded_and_bounded(self):
        config = GAConfig(populationSize=6)
        topology = NetworkTopology()
        first = initial_population(config, topology, random.Random(4))
        again = initial_population(config, topology, random.Random(4))
        assert [g.genes for g in first] == [g.genes for g in again]
        assert len(first) == 6
        for genome in first:
            assert len(genome.genes) == topology.genomeLength
            assert all(-1.0 <= gene <= 1.0 for gene in genome.genes)
            assert genome.fitness is None

    def test_pick_elites_orders_by_fitness_then_index(self):
        population = scored([0.1, 0.9, 0.9, 0.5])
        assert pick_elites(population, 2) == [1, 2]
        assert pick_elites(population, 4) == [1, 2, 3, 0]

    def test_pick_elites_is_shift_invariant(self):
        base = [0.3, -0.2, 0.8, 0.8, 0.1]
        shifted = [v + 17.5 for v in base]
        assert pick_elites(scored(base), 3) == pick_elites(scored(shifted), 3)

    def test_tournament_is_seeded_and_favors_fitness(self):
        population = scored([0.1, 0.2, 0.9, 0.3])
        pick = tournament_select(population, 3, random.Random(11))
        again = tournament_select(population, 3, random.Random(11))
        assert pick is again
        assert pick in population
        # a tournament over many draws almost surely sees the best genome
        big = tournament_select(population, 200, random.Random(0))
        assert big.fitness == 0.9

    def evolve(self, population, config, seed=1):
        calls = []

        def evaluator(genome):
            calls.append(genome)
            genome.fitness = sum(genome.genes)

        nxt = evolve_generation(population, evaluator, config, random.Random(seed))
        return nxt, calls

    def test_elites_survive_unchanged(self):
        population = [
            Genome(genes=(0.0, 1.0), fitness=0.4, metrics=metrics()),
            Genome(genes=(2.0, 3.0), fitness=0.9, metrics=metrics()),
            Genome(genes=(4.0, 5.0), fitness=0.1, metrics=metrics()),
        ]
        config = GAConfig(populationSize=3, elitism=2, mutationRate=0.0)
        nxt, calls = self.evolve(population, config)
        assert calls == []  # everyone was already scored
        assert nxt[0].genes == (2.0, 3.0) and nxt[0].fitness == 0.9
        assert nxt[1].genes == (0.0, 1.0) and nxt[1].fitness == 0.4
        assert nxt[0] is not population[1]  # clones, not aliases
        assert nxt[0].metrics == metrics()

    def test_offspring_arrive_unscored(self):
        population = scored([0.5, 0.2, 0.8, 0.1])
        config = GAConfig(populationSize=4, elitism=1)
        nxt, _ = self.evolve(population, config)
        assert nxt[0].fitness is not None
        assert all(g.fitness is None for g in nxt[1:])

    def test_unscored_parents_are_evaluated_first(self):
        population = [Genome(genes=(0.1, 0.2)), Genome(genes=(0.3, 0.4))]
        config = GAConfig(populationSize=2, elitism=1)
        nxt, calls = self.evolve(population, config)
        assert len(calls) == 2
        assert all(g.fitness is not None for g in population)

    def test_no_variation_copies_tournament_winners(self):
        population = scored([0.5, 0.2, 0.8, 0.1])
        parent_genes = {g.genes for g in population}
        config = GAConfig(populationSize=4, elitism=1, crossoverRate=0.0, mutationRate=0.0)
        nxt, _ = self.evolve(population, config)
        assert all(g.genes in parent_genes for g in nxt)

    def test_crossover_of_identical_parents_is_identity(self):
        population = [Genome(genes=(1.0, 2.0, 3.0), fitness=0.5) for _ in range(4)]
        config = GAConfig(populationSize=4, elitism=1, crossoverRate=1.0, mutationRate=0.0)
        nxt, _ = self.evolve(population, config)
        assert all(g.genes == (1.0, 2.0, 3.0) for g in nxt)

    def test_zero_sigma_mutation_changes_nothing(self):
        population = scored([0.5, 0.2, 0.8, 0.1])
        parent_genes = {g.genes for g in population}
        config = GAConfig(
            populationSize=4, elitism=1, crossoverRate=0.0,
            mutationRate=1.0, mutationSigma=0.0,
        )
        nxt, _ = self.evolve(population, config)
        assert all(g.genes in parent_genes for g in nxt)

    def test_mutation_clamps_to_weight_limit(self):
        population = [Genome(genes=(0.0,) * 8, fitness=0.5) for _ in range(4)]
        config = GAConfig(
            populationSize=4, elitism=1, crossoverRate=0.0,
            mutationRate=1.0, mutationSigma=1000.0, weightLimit=5.0,
        )
        nxt, _ = self.evolve(population, config)
        flat = [gene for g in nxt[1:] for gene in g.genes]
        assert all(-5.0 <= gene <= 5.0 for gene in flat)
        assert any(abs(gene) == 5.0 for gene in flat)  # sigma 1000 slams the rails

    def test_generation_stats_line_format(self):
        stats = GenerationStats(
            generation=3, best=0.5, mean=0.25, bestEnergy=0.1, bestPeople=1.0
        )
        assert stats.line() == "3 0.500000 0.250000 0.100000 1.000000"


def tiny_world(**kw):
    base = dict(
        gridWidth=3, gridHeight=3, wirelessRange=1, numPeople=2, maxTicks=15,
        ambientLight=0.05, lightBrightness=0.8, darkThreshold=0.15,
        energyPerTickOn=1.0, rngSeed=3,
    )
    base.update(kw)
    return WorldConfig(**base)


def tiny_ga(**kw):
    base = dict(populationSize=4, generations=2, elitism=1, tournamentSize=2, rngSeed=5)
    base.update(kw)
    return GAConfig(**base)


class TestEvaluateSolution:
    def test_returns_report_and_metrics(self):
        report, m = evaluate_solution(
            tiny_world(numPeople=0, maxTicks=5),
            ALWAYS_ON_GENES,
            NetworkTopology(),
        )
        assert isinstance(report, FitnessReport)
        assert report.metrics == m
        assert m.pEnergy == 1.0
        assert report.fitness == pytest.approx(1.0 - 0.4)

    def test_publishes_full_protocol_in_order(self):
        with Broker() as broker:
            queue = broker.declare_queue("obs", ["OBSERVER.#"])
            evaluate_solution(
                tiny_world(numPeople=0, maxTicks=3),
                ALWAYS_ON_GENES,
                NetworkTopology(),
                broker,
            )
            broker.close()
            actions = drain_actions(queue)
        assert actions == [
            "chooseAdaptationMethod",
            "selectNeuralConfiguration",
            "useIndividualGenesToANN",
            "startExecutionWithControllerConfiguration",
            "readSimulationResults",
            "calculateEnergy",
            "calculatePeople",
            "calculateTripDuration",
            "achievePeopleTarget",  # empty world vacuously delivers everyone
            "calculateFitness",
        ]

    def test_world_logs_flag_silences_simulation_only(self):
        with Broker() as broker:
            everything = broker.declare_queue("all", ["#"])
            evaluate_solution(
                tiny_world(numPeople=0, maxTicks=3),
                ALWAYS_ON_GENES,
                NetworkTopology(),
                broker,
                world_logs=False,
            )
            broker.close()
            events = []
            while True:
                try:
                    ev = everything.consume(0.0)
                except QueueClosed:
                    break
                if ev is None:
                    break
                events.append(ev)
        assert events
        assert {e.agentType for e in events} == {"OBSERVER"}

    def test_global_machine_passes_on_successful_run(self):
        patterns = [
            "OBSERVER.*.startExecutionWithControllerConfiguration.#",
            "OBSERVER.*.readSimulationResults.#",
            "OBSERVER.*.calculateEnergy.#",
            "OBSERVER.*.achieveEnergyTarget.#",
            "OBSERVER.*.achievePeopleTarget.#",
            "OBSERVER.*.calculateFitness.#",
        ]
        case = TestCase(
            functionName="evaluate-solution",
            level="global",
            subLevel="mas",
            validationSequence=tuple(
                TransitionSpec(alternatives=(parse_binding_pattern(p),))
                for p in patterns
            ),
        )
        world = tiny_world(gridWidth=5, gridHeight=5, numPeople=3, maxTicks=60, rngSeed=1)
        with Broker() as broker:
            queue = broker.declare_queue("machine", patterns)
            report, _ = evaluate_solution(
                world, ALWAYS_ON_GENES, NetworkTopology(), broker
            )
            broker.close()
            verdict = run(compile(case), queue)
        assert report.peopleTargetMet and report.energyTargetMet
        assert verdict.outcome == "pass"


class TestRunObserver:
    def count_evaluations(self, world, ga):
        with Broker() as broker:
            queue = broker.declare_queue(
                "starts", ["OBSERVER.*.startExecutionWithControllerConfiguration.#"]
            )
            result = run_observer(world, ga, broker=broker)
            broker.close()
            return result, len(drain_actions(queue))

    def test_episode_count_reflects_elite_caching(self):
        # gen 1 scores the full population, gen 2 only the offspring,
        # plus one final confirmation episode for the winner
        result, starts = self.count_evaluations(
            tiny_world(), tiny_ga(populationSize=3, generations=2, elitism=1)
        )
        assert starts == 3 + 2 + 1
        assert len(result.history) == 2

    def test_single_generation_scores_population_once(self):
        result, starts = self.count_evaluations(
            tiny_world(), tiny_ga(populationSize=2, generations=1)
        )
        assert starts == 2 + 1

    def test_zero_generations_returns_best_of_initial(self):
        result, starts = self.count_evaluations(
            tiny_world(), tiny_ga(populationSize=3, generations=0)
        )
        assert starts == 3 + 1
        assert result.history == ()
        assert result.best.fitness is not None

    def test_single_member_population(self):
        result = run_observer(tiny_world(), tiny_ga(populationSize=1, elitism=1))
        assert len(result.history) == 2
        assert result.best.fitness is not None

    def test_history_file_matches_returned_stats(self, tmp_path):
        path = tmp_path / "history.txt"
        result = run_observer(tiny_world(), tiny_ga(generations=3), history_path=str(path))
        lines = path.read_text().splitlines()
        assert lines == [stats.line() for stats in result.history]
        assert len(lines) == 3

    def test_best_fitness_never_degrades_across_generations(self):
        result = run_observer(tiny_world(), tiny_ga(populationSize=6, generations=4))
        best = [stats.best for stats in result.history]
        assert best == sorted(best)

    def test_deterministic_for_fixed_seeds(self):
        a = run_observer(tiny_world(), tiny_ga())
        b = run_observer(tiny_world(), tiny_ga())
        assert a.best.genes == b.best.genes
        assert a.history == b.history
        assert a.finalReport == b.finalReport

    def test_final_report_confirms_cached_best_score(self):
        # the confirmation episode reuses the training world seed, so the
        # reported fitness must equal the cached one bit for bit
        result = run_observer(tiny_world(), tiny_ga())
        assert result.finalReport.fitness == result.best.fitness
        assert result.finalReport.metrics == result.best.metrics

    def test_hidden_count_sets_genome_length(self):
        result = run_observer(tiny_world(), tiny_ga(generations=0, hiddenCount=2))
        assert len(result.best.genes) == NetworkTopology(hiddenCount=2).genomeLength

    def test_learning_machine_passes_on_observer_logs(self):
        patterns = [
            "OBSERVER.*.chooseAdaptationMethod.#",
            "OBSERVER.*.selectNeuralConfiguration.#",
            "OBSERVER.*.useIndividualGenesToANN.#",
            "OBSERVER.*.startExecutionWithControllerConfiguration.#",
        ]
        case = TestCase(
            functionName="change-neural-network",
            level="local",
            subLevel="learning",
            validationSequence=tuple(
                TransitionSpec(alternatives=(parse_binding_pattern(p),))
                for p in patterns
            ),
        )
        with Broker() as broker:
            queue = broker.declare_queue("machine", patterns)
            run_observer(tiny_world(), tiny_ga(populationSize=2, generations=1), broker=broker)
            broker.close()
            verdict = run(compile(case), queue)
        assert verdict.outcome == "pass"
        assert verdict.failedState is None
