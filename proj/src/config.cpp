#include "scnn/config.hpp"

#include <fstream>
#include <set>
#include <type_traits>

#include "scnn/idx.hpp"

SCNN_NAMESPACE_BEGIN

using nlohmann::json;

namespace {

// Reads keys from one JSON object and rejects any key left unread.
class ObjectReader {
 public:
  ObjectReader(const json& object, std::string where) : object_(object), where_(std::move(where)) {
    if (!object_.is_object()) throw ConfigError(where_ + ": expected an object");
  }
  void finish() const {
    for (const auto& [key, value] : object_.items()) {
      if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

  template <class T>
  void read(const char* key, T& target) {
    seen_.insert(key);
    if (!object_.contains(key)) return;
    const json& v = object_.at(key);
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!v.is_number_integer() || (std::is_unsigned_v<T> && !v.is_number_unsigned())) {
        throw ConfigError(where_ + "." + key + ": expected " +
                          (std::is_unsigned_v<T> ? "a non-negative integer" : "an integer"));
      }
    }
    try {
      target = v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  void read(const char* key, std::optional<std::size_t>& target) {
    seen_.insert(key);
    if (!object_.contains(key)) return;
    const json& v = object_.at(key);
    if (v.is_null()) {
      target.reset();
    } else if (v.is_number_unsigned()) {
      target = v.get<std::size_t>();
    } else {
      throw ConfigError(where_ + "." + key + ": expected a non-negative integer or null");
    }
  }

  template <class Enum, class Parse>
  void read_enum(const char* key, Enum& target, Parse parse) {
    std::string name;
    bool present = object_.contains(key);
    read(key, name);
    if (!present) return;
    try {
      target = parse(name);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  std::optional<ObjectReader> child(const char* key) {
    seen_.insert(key);
    if (!object_.contains(key)) return std::nullopt;
    return std::optional<ObjectReader>(std::in_place, object_.at(key), where_ + "." + key);
  }

 private:
  const json& object_;
  std::string where_;
  std::set<std::string> seen_;
};

json optional_json(const std::optional<std::size_t>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

CyclePlan RunConfig::resolved_plan() const {
  CyclePlan p = plan;
  p.seed = seed;
  p.net = NetConfig::for_scale(net_scale);
  p.output_dir = output_dir;
  return p;
}

void RunConfig::validate(bool check_paths) const {
  if (dataset.kind != "idx") throw ConfigError("dataset.kind: only 'idx' is supported, got '" + dataset.kind + "'");
  if (dataset.subset_size && *dataset.subset_size == 0) throw ConfigError("dataset.subset_size must be positive");
  try {
    resolved_plan().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (check_paths) {
    for (const auto& file : {dataset.train_images, dataset.train_labels, dataset.test_images, dataset.test_labels}) {
      const auto path = dataset.path(file);
      if (!std::filesystem::is_regular_file(path)) throw ConfigError("dataset file not found: " + path.string());
    }
    if (dataset.subset_size) {
      std::size_t available = 0;
      try {
        available = idx_item_count(dataset.path(dataset.train_labels));
      } catch (const IdxError& e) {
        throw ConfigError(e.what());
      }
      if (*dataset.subset_size > available) {
        throw ConfigError("dataset.subset_size " + std::to_string(*dataset.subset_size) + " exceeds the " +
                          std::to_string(available) + " training samples");
      }
    }
  }
}

json to_json(const RunConfig& c) {
  const CyclePlan& p = c.plan;
  const SynthesisConfig& s = p.synthesis;
  return json{
      {"seed", c.seed},
      {"output_dir", c.output_dir.string()},
      {"dataset",
       {{"kind", c.dataset.kind},
        {"directory", c.dataset.directory.string()},
        {"train_images", c.dataset.train_images},
        {"train_labels", c.dataset.train_labels},
        {"test_images", c.dataset.test_images},
        {"test_labels", c.dataset.test_labels},
        {"subset_size", optional_json(c.dataset.subset_size)},
        {"stratified", c.dataset.stratified},
        {"subset_seed", c.dataset.subset_seed}}},
      {"net", {{"scale", to_string(c.net_scale)}}},
      {"training",
       {{"primary_epochs", p.primary_epochs},
        {"synthetic_epochs", p.synthetic_epochs},
        {"offline_epochs", p.offline_epochs},
        {"batch_size", p.batch_size},
        {"optimizer", to_string(p.optimizer.kind)},
        {"learning_rate", p.optimizer.learning_rate},
        {"momentum", p.optimizer.momentum},
        {"mix_primary", p.mix_primary}}},
      {"cycle",
       {{"cycles", p.cycles},
        {"strategy", to_string(p.strategy)},
        {"patience", optional_json(p.patience)},
        {"variants_per_sample", p.variants_per_sample},
        {"workers", p.workers}}},
      {"synthesis",
       {{"manipulator", s.manipulator ? to_string(*s.manipulator) : std::string("round_robin")},
        {"alpha", s.alpha},
        {"max_steps", s.max_steps},
        {"affine_learning_rate", s.affine_learning_rate},
        {"grid_learning_rate", s.grid_learning_rate},
        {"erase_learning_rate", s.erase_learning_rate},
        {"stop_rule", to_string(s.stop_rule)},
        {"margin", s.margin},
        {"normalize_targets", s.normalize_targets},
        {"grid_kernel",
         {{"width", s.grid.width},
          {"height", s.grid.height},
          {"mu", s.grid.mu},
          {"sigma", s.grid.sigma},
          {"amplitude", s.grid.amplitude}}},
        {"erase", {{"cells", s.erase_cells}, {"count", s.erase_count}, {"mode", to_string(s.erase_mode)}}}}},
  };
}

RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  RunConfig c;
  CyclePlan& p = c.plan;
  SynthesisConfig& s = p.synthesis;
  {
    ObjectReader root(j, "config");
    root.read("seed", c.seed);
    std::string output_dir = c.output_dir.string();
    root.read("output_dir", output_dir);
    c.output_dir = output_dir;
    if (auto d = root.child("dataset")) {
      d->read("kind", c.dataset.kind);
      std::string dir = c.dataset.directory.string();
      d->read("directory", dir);
      c.dataset.directory = dir;
      d->read("train_images", c.dataset.train_images);
      d->read("train_labels", c.dataset.train_labels);
      d->read("test_images", c.dataset.test_images);
      d->read("test_labels", c.dataset.test_labels);
      d->read("subset_size", c.dataset.subset_size);
      d->read("stratified", c.dataset.stratified);
      d->read("subset_seed", c.dataset.subset_seed);
      d->finish();
    }
    if (auto n = root.child("net")) {
      n->read_enum("scale", c.net_scale, parse_net_scale);
      n->finish();
    }
    if (auto t = root.child("training")) {
      t->read("primary_epochs", p.primary_epochs);
      t->read("synthetic_epochs", p.synthetic_epochs);
      t->read("offline_epochs", p.offline_epochs);
      t->read("batch_size", p.batch_size);
      t->read_enum("optimizer", p.optimizer.kind, parse_optimizer_kind);
      t->read("learning_rate", p.optimizer.learning_rate);
      t->read("momentum", p.optimizer.momentum);
      t->read("mix_primary", p.mix_primary);
      t->finish();
    }
    if (auto cy = root.child("cycle")) {
      cy->read("cycles", p.cycles);
      cy->read_enum("strategy", p.strategy, parse_strategy);
      cy->read("patience", p.patience);
      cy->read("variants_per_sample", p.variants_per_sample);
      cy->read("workers", p.workers);
      cy->finish();
    }
    if (auto sy = root.child("synthesis")) {
      std::string manipulator;
      const bool has_manipulator = j.at("synthesis").contains("manipulator");
      sy->read("manipulator", manipulator);
      if (has_manipulator) {
        if (manipulator == "round_robin") {
          s.manipulator.reset();
        } else {
          try {
            s.manipulator = parse_manipulator_kind(manipulator);
          } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config.synthesis.manipulator: ") + e.what());
          }
        }
      }
      sy->read("alpha", s.alpha);
      sy->read("max_steps", s.max_steps);
      sy->read("affine_learning_rate", s.affine_learning_rate);
      sy->read("grid_learning_rate", s.grid_learning_rate);
      sy->read("erase_learning_rate", s.erase_learning_rate);
      sy->read_enum("stop_rule", s.stop_rule, parse_stop_rule);
      sy->read("margin", s.margin);
      sy->read("normalize_targets", s.normalize_targets);
      if (auto g = sy->child("grid_kernel")) {
        g->read("width", s.grid.width);
        g->read("height", s.grid.height);
        g->read("mu", s.grid.mu);
        g->read("sigma", s.grid.sigma);
        g->read("amplitude", s.grid.amplitude);
        g->finish();
      }
      if (auto e = sy->child("erase")) {
        e->read("cells", s.erase_cells);
        e->read("count", s.erase_count);
        e->read_enum("mode", s.erase_mode, parse_erase_mode);
        e->finish();
      }
      sy->finish();
    }
    root.finish();
  }
  if (c.dataset.directory.is_relative()) c.dataset.directory = base_dir / c.dataset.directory;
  if (c.output_dir.is_relative()) c.output_dir = base_dir / c.output_dir;
  c.dataset.directory = c.dataset.directory.lexically_normal();
  c.output_dir = c.output_dir.lexically_normal();
  c.validate(false);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j, std::filesystem::absolute(path).parent_path());
}

void save_run_config(const std::filesystem::path& path, const RunConfig& config) {
  RunConfig resolved = config;
  resolved.dataset.directory = std::filesystem::absolute(resolved.dataset.directory).lexically_normal();
  resolved.output_dir = std::filesystem::absolute(resolved.output_dir).lexically_normal();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << to_json(resolved).dump(2) << '\n';
  if (!out) throw ConfigError("cannot write config " + path.string());
}

SCNN_NAMESPACE_END
