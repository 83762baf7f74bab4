#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Invalid configuration or arguments; exits with kExitUsage.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunOverrides {
  std::string config;
  std::string output;
  std::optional<std::size_t> workers;
  std::optional<std::uint64_t> seed;
};

struct CycleArgs {
  RunOverrides run;
  std::string strategy;
  std::optional<std::size_t> cycles;
  bool baseline = false;
};

struct SynthesizeArgs {
  RunOverrides run;
  std::string checkpoint;
  int cycle = 1;
};

struct EvaluateArgs {
  std::string checkpoint;
  std::string config;
  std::string images;
  std::string labels;
};

struct ExportArgs {
  std::string source_images;
  std::string source_labels;
  std::string synth_images;
  std::string synth_labels;
  std::string provenance;
  std::string output;
  std::size_t limit = 16;
};

struct GradcheckArgs {
  std::size_t seeds = 10;
  double threshold = 1e-3;
  std::uint64_t seed = 0;
};

int run_train(const RunOverrides& args);
int run_synthesize(const SynthesizeArgs& args);
int run_cycle_command(const CycleArgs& args);
int run_evaluate(const EvaluateArgs& args);
int run_export_images(const ExportArgs& args);
int run_gradcheck(const GradcheckArgs& args);
