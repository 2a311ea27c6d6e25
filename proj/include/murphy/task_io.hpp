#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "murphy/common.hpp"
#include "murphy/toy_env.hpp"

// JSON-lines task sets, one task per line, so evaluation suites are fixed
// artifacts shared across runs.

namespace murphy::env {

namespace detail {

inline nlohmann::json tests_to_json(const std::vector<TestCase>& tests) {
  nlohmann::json arr = nlohmann::json::array();
  for (const TestCase& tc : tests) {
    arr.push_back({{"input", tc.input}, {"expected", tc.expected}});
  }
  return arr;
}

inline std::vector<TestCase> tests_from_json(const nlohmann::json& arr,
                                             int line) {
  std::vector<TestCase> out;
  for (const nlohmann::json& t : arr) {
    if (!t.contains("input") || !t.contains("expected")) {
      throw ParseError("task file line " + std::to_string(line) +
                       ": test case missing 'input' or 'expected'");
    }
    out.push_back({t["input"].get<std::int64_t>(),
                   t["expected"].get<std::int64_t>()});
  }
  return out;
}

}  // namespace detail

inline nlohmann::json task_to_json(const Task& task) {
  return {{"id", task.id},
          {"prompt_key", task.prompt_key},
          {"family", family_name(task.family)},
          {"coeffs", task.coeffs},
          {"tests",
           {{"train", detail::tests_to_json(task.train_tests)},
            {"visible", detail::tests_to_json(task.visible_tests)},
            {"hidden", detail::tests_to_json(task.hidden_tests)}}}};
}

inline Task task_from_json(const nlohmann::json& j, int line = 0) {
  Task task;
  try {
    task.id = j.at("id").get<std::string>();
    task.prompt_key = j.at("prompt_key").get<std::string>();
    task.family = family_from_name(j.at("family").get<std::string>());
    task.coeffs = j.at("coeffs").get<std::vector<std::int64_t>>();
    const nlohmann::json& tests = j.at("tests");
    task.train_tests = detail::tests_from_json(tests.at("train"), line);
    task.visible_tests = detail::tests_from_json(tests.at("visible"), line);
    task.hidden_tests = detail::tests_from_json(tests.at("hidden"), line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("task file line " + std::to_string(line) + ": " +
                     std::string(e.what()));
  }
  return task;
}

inline void dump_tasks(std::ostream& os, const std::vector<Task>& tasks) {
  for (const Task& t : tasks) os << task_to_json(t).dump() << '\n';
}

inline std::vector<Task> load_tasks(std::istream& is) {
  std::vector<Task> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("task file line " + std::to_string(line_no) + ": " +
                       std::string(e.what()));
    }
    out.push_back(task_from_json(j, line_no));
  }
  return out;
}

inline std::vector<Task> load_tasks_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open task file '" + path + "'");
  return load_tasks(in);
}

}  // namespace murphy::env
