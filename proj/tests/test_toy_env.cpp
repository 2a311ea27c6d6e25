#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "murphy/task_io.hpp"
#include "murphy/toy_env.hpp"

using namespace murphy::env;

namespace {

Task make_task(std::vector<std::int64_t> coeffs, Family family,
               std::vector<TestCase> train) {
  Task t;
  t.id = "fixture";
  t.prompt_key = "fixture";
  t.family = family;
  t.coeffs = std::move(coeffs);
  t.train_tests = std::move(train);
  return t;
}

}  // namespace

TEST_CASE("postfix evaluation") {
  Program p = make_program({Tok::X, Tok::C1, Tok::Add});
  CHECK(eval_program(p, 3) == EvalValue{std::int64_t{4}});
  CHECK(eval_program(p, -4) == EvalValue{std::int64_t{-3}});

  CHECK(eval_program(make_program({Tok::Add}), 0) ==
        EvalValue{DslError::StackUnderflow});
  CHECK(eval_program(make_program({Tok::X, Tok::C1}), 2) ==
        EvalValue{DslError::LeftoverOperands});
  CHECK(eval_program(make_program({}), 1) == EvalValue{DslError::EmptyProgram});

  // PAD terminates evaluation; trailing garbage after PAD is ignored.
  Program padded = make_program({Tok::X, Tok::C2, Tok::Mul});
  padded.tokens[4] = Tok::Add;
  CHECK(eval_program(padded, 3) == EvalValue{std::int64_t{6}});

  CHECK(eval_program(make_program({Tok::C4, Tok::C3, Tok::Sub}), 0) ==
        EvalValue{std::int64_t{1}});
}

TEST_CASE("evaluate: full pass, full fail, partial") {
  Task t = make_task({1, 1}, Family::Linear, {{0, 1}, {1, 2}, {2, 3}});
  EvalOutcome full = evaluate(t, make_program({Tok::X, Tok::C1, Tok::Add}),
                              Suite::Train);
  CHECK(full.reward == 1.0);
  CHECK(full.feedback.failures.empty());
  CHECK(full.feedback.passed == 3);

  EvalOutcome fail = evaluate(t, make_program({Tok::X, Tok::C2, Tok::Add}),
                              Suite::Train);
  CHECK(fail.reward == 0.0);
  REQUIRE(fail.feedback.failures.size() == 3);
  for (const Failure& f : fail.feedback.failures) {
    CHECK(std::get<std::int64_t>(f.got) == f.expected + 1);
  }

  Task sq = make_task({1, 0, 0}, Family::Quadratic, {{0, 0}, {1, 1}, {2, 4}});
  EvalOutcome part = evaluate(sq, make_program({Tok::X, Tok::C1, Tok::Mul}),
                              Suite::Train);
  CHECK(part.reward == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  REQUIRE(part.feedback.failures.size() == 1);
  CHECK(part.feedback.failures[0].input == 2);
  CHECK(part.feedback.failures[0].expected == 4);
  CHECK(std::get<std::int64_t>(part.feedback.failures[0].got) == 2);
}

TEST_CASE("evaluate: empty suite is a configuration error") {
  Task t = make_task({1, 1}, Family::Linear, {{0, 1}});
  CHECK_THROWS_AS(evaluate(t, make_program({Tok::X}), Suite::Visible),
                  murphy::ConfigError);
}

TEST_CASE("evaluate is pure and reward*total == passed") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 300; ++i) {
    Task t = sample_task(rng() % 1000, Family::Quadratic);
    Program p = testutil::random_program(rng);
    EvalOutcome a = evaluate(t, p, Suite::Train);
    EvalOutcome b = evaluate(t, p, Suite::Train);
    CHECK(a.reward == b.reward);
    CHECK(a.feedback == b.feedback);
    double scaled = a.reward * a.feedback.total;
    CHECK(scaled == doctest::Approx(a.feedback.passed).epsilon(1e-12));
    CHECK((a.reward == 1.0) == a.feedback.failures.empty());
  }
}

TEST_CASE("sample_task determinism and diversity") {
  Task a = sample_task(7, Family::Linear);
  Task b = sample_task(7, Family::Linear);
  CHECK(a.id == b.id);
  CHECK(a.coeffs == b.coeffs);
  CHECK(a.train_tests == b.train_tests);

  std::set<std::vector<std::int64_t>> targets;
  for (std::uint64_t s = 0; s < 100; ++s) {
    targets.insert(sample_task(s, Family::Linear).coeffs);
  }
  CHECK(targets.size() >= 90);
}

TEST_CASE("task suites: structure and disjointness") {
  for (auto family : {Family::Linear, Family::Quadratic, Family::HiddenOffset}) {
    for (std::uint64_t s = 0; s < 20; ++s) {
      Task t = sample_task(s, family);
      CHECK(!t.train_tests.empty());
      std::set<std::int64_t> visible, hidden;
      for (const TestCase& tc : t.visible_tests) visible.insert(tc.input);
      for (const TestCase& tc : t.hidden_tests) hidden.insert(tc.input);
      for (std::int64_t x : visible) CHECK(hidden.count(x) == 0);
      for (const TestCase& tc : t.train_tests) {
        CHECK(tc.input >= kDomainMin);
        CHECK(tc.input <= kDomainMax);
        CHECK(tc.expected == t.target(tc.input));
      }
    }
  }
}

TEST_CASE("hidden-offset family: offset only visible through feedback") {
  Task t = sample_task(3, Family::HiddenOffset);
  REQUIRE(t.coeffs.size() == 1);
  std::int64_t c = t.coeffs[0];
  CHECK(c >= 0);
  CHECK(c <= 4);
  for (const TestCase& tc : t.visible_tests) CHECK(tc.expected == tc.input + c);
  // Prompt key carries no task-specific information.
  CHECK(sample_task(11, Family::HiddenOffset).prompt_key == t.prompt_key);

  // expected - got is constant within one evaluation of an additive guess
  // and reveals the offset: delta = c - guessed.
  for (int guess = 0; guess <= 4; ++guess) {
    Program add = make_program(
        {Tok::X, static_cast<Tok>(static_cast<int>(Tok::C0) + guess),
         Tok::Add});
    EvalOutcome out = evaluate(t, add, Suite::Train);
    std::set<std::int64_t> deltas;
    for (const Failure& f : out.feedback.failures) {
      deltas.insert(f.expected - std::get<std::int64_t>(f.got));
    }
    if (guess == c) {
      CHECK(deltas.empty());
    } else {
      REQUIRE(deltas.size() == 1);
      CHECK(*deltas.begin() == c - guess);
    }
  }
}

TEST_CASE("feedback digest: suite-independent error patterns") {
  Task t = sample_task(5, Family::HiddenOffset);
  Program p = make_program({Tok::X, Tok::C0, Tok::Add});  // guess c = 0
  EvalOutcome train = evaluate(t, p, Suite::Train);
  EvalOutcome visible = evaluate(t, p, Suite::Visible);
  if (t.coeffs[0] != 0) {
    // Same mistake, different suites: same digest, so training and
    // evaluation condition on the same bucket.
    CHECK(feedback_digest(train.feedback) == feedback_digest(visible.feedback));
  }
  FeedbackRecord empty;
  empty.passed = 9;
  empty.total = 9;
  CHECK(feedback_digest(empty) != feedback_digest(train.feedback));

  FeedbackRecord a, b;
  a.total = b.total = 1;
  a.failures.push_back({0, 1, std::int64_t{0}});
  b.failures.push_back({0, 1, std::int64_t{2}});
  CHECK(feedback_digest(a) != feedback_digest(b));
}

TEST_CASE("task JSONL round trip") {
  std::vector<Task> tasks;
  for (std::uint64_t s = 0; s < 5; ++s) {
    tasks.push_back(sample_task(s, Family::Quadratic));
    tasks.push_back(sample_task(s, Family::HiddenOffset));
  }
  std::stringstream ss;
  dump_tasks(ss, tasks);
  std::vector<Task> back = load_tasks(ss);
  REQUIRE(back.size() == tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    CHECK(back[i].id == tasks[i].id);
    CHECK(back[i].prompt_key == tasks[i].prompt_key);
    CHECK(back[i].family == tasks[i].family);
    CHECK(back[i].coeffs == tasks[i].coeffs);
    CHECK(back[i].train_tests == tasks[i].train_tests);
    CHECK(back[i].visible_tests == tasks[i].visible_tests);
    CHECK(back[i].hidden_tests == tasks[i].hidden_tests);
  }
  CHECK_THROWS_AS(load_tasks_file("/nonexistent/tasks.jsonl"),
                  murphy::ConfigError);
  std::stringstream bad("{\"id\": \"x\"}\n");
  CHECK_THROWS_AS(load_tasks(bad), murphy::ParseError);
}

TEST_CASE("token names round trip") {
  for (int v = 0; v < kVocabSize; ++v) {
    Tok t = static_cast<Tok>(v);
    CHECK(token_from_name(token_name(t)) == t);
  }
  CHECK_THROWS_AS(token_from_name("bogus"), murphy::ParseError);
}
