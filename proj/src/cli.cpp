#include "cbnet/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "cbnet/heatmap.hpp"
#include "cbnet/model_check.hpp"
#include "cbnet/profile.hpp"
#include "cbnet/task.hpp"

namespace cbnet {
namespace {

namespace fs = std::filesystem;

// Raised for flag combinations CLI11 cannot reject on its own.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string fixed(double v, int digits = 6) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string describe(const CBNetConfig& c) {
  std::ostringstream s;
  s << "k=" << c.k << " style=" << style_name(c.style) << " share_weights=" << (c.share_weights ? 1 : 0)
    << " accelerated=" << (c.accelerated ? 1 : 0) << " image=" << c.spec.image_h << "x" << c.spec.image_w
    << " stages=" << c.spec.stages;
  return s.str();
}

CBNet build_net(const RunConfig& rc) {
  CBNetConfig cfg = rc.net_config();
  return CBNet::build(cfg, rc.seed);
}

void maybe_load(const RunConfig& rc, CBNet& net, Head& head) {
  if (rc.weights_in.empty()) return;
  import_model(net, head, load_weights(rc.weights_in));
}

// Opens (and truncates) every output path up front so a run cannot fail late
// on an unwritable destination.
void ensure_writable(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream probe(path, std::ios::binary | std::ios::trunc);
  if (!probe) throw std::runtime_error("cannot write " + path.string());
}

int cmd_summarize(const RunConfig& rc, std::ostream& out) {
  CBNet net = build_net(rc);
  out << "cbnet " << describe(net.config()) << "\n";
  out << "backbone first_stage params\n";
  for (std::size_t k = 1; k <= net.backbone_count(); ++k) {
    const Backbone& b = net.backbone(k);
    out << "b" << k << (k == net.backbone_count() ? " (lead)" : " (assistant)") << " "
        << b.params->first_stage << " " << param_count(b);
    if (k > 1 && b.params == net.backbone(k - 1).params) out << " shared-with-b" << (k - 1);
    out << "\n";
  }
  out << "composite terms\n";
  for (const PlanStep& step : net.plan()) {
    for (const CompositeTerm& t : step.terms) {
      const Shape target = net.spec().level_shape(step.level - 1);
      out << "  " << (t.connection ? t.connection->name() : std::string("direct")) << " x" << t.source_backbone
          << "^" << t.source_level << " -> stage " << step.level << " input of b" << step.backbone << " "
          << target.str();
      if (t.connection) out << " params=" << net.connections().at(*t.connection).param_count();
      out << "\n";
    }
  }
  out << "composite_connections=" << net.connections().size() << "\n";
  out << "direct_additions=" << net.direct_additions() << "\n";
  out << "composite_params=" << composite_param_count(net) << "\n";
  out << "param_count=" << param_count(net) << "\n";
  out << "flop_count=" << flop_count(net, net.spec().image_shape()) << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& rc, std::ostream& out) {
  CBNet net = build_net(rc);
  Head head = make_head(net.spec(), rc.seed);
  maybe_load(rc, net, head);
  if (net.spec().image_h != net.spec().image_w) throw UsageError("train: synthetic task needs square images");

  const fs::path out_dir(rc.out_dir);
  const fs::path weights_out = rc.weights_out.empty() ? out_dir / "weights.cbnw" : fs::path(rc.weights_out);
  const fs::path csv = out_dir / "loss.csv";
  ensure_writable(weights_out);
  ensure_writable(csv);

  const auto dataset = gen_dataset(rc.seed, rc.dataset_size, net.spec().image_h);
  TrainOptions options;
  options.steps = rc.steps;
  options.lr = rc.lr;
  options.seed = rc.seed;
  const TrainLog log = train(net, head, dataset, options);

  std::ofstream csv_out(csv, std::ios::binary | std::ios::trunc);
  csv_out << "step,loss\n";
  for (std::size_t i = 0; i < log.losses.size(); ++i) csv_out << i << "," << exact(log.losses[i]) << "\n";
  if (!csv_out) throw std::runtime_error("failed writing " + csv.string());
  save_weights(export_model(net, head), weights_out);

  const std::size_t per_epoch = (dataset.size() + options.batch_size - 1) / options.batch_size;
  out << "trained " << describe(net.config()) << " steps=" << rc.steps << " lr=" << rc.lr << "\n";
  if (!log.losses.empty()) {
    out << "initial_loss=" << fixed(log.initial_loss(per_epoch)) << " final_loss=" << fixed(log.final_loss(per_epoch))
        << "\n";
  }
  out << "cell_f1=" << fixed(log.final_metrics.cell_f1) << " class_accuracy=" << fixed(log.final_metrics.class_accuracy)
      << "\n";
  out << "weights=" << weights_out.string() << " loss_log=" << csv.string() << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& rc, std::ostream& out) {
  CBNet net = build_net(rc);
  Head head = make_head(net.spec(), rc.seed);
  maybe_load(rc, net, head);
  const auto dataset = gen_dataset(rc.seed, rc.dataset_size, net.spec().image_h);
  const Metrics m = evaluate(net, head, dataset);
  out << "cell_f1=" << fixed(m.cell_f1) << " class_accuracy=" << fixed(m.class_accuracy) << "\n";
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& rc, std::ostream& out) {
  CBNet net = build_net(rc);
  Head head = make_head(net.spec(), rc.seed);
  maybe_load(rc, net, head);
  net.set_bn_mode(BnMode::Training);
  CBNetGradFragment fragment(net, random_image(net.spec(), 2, rc.seed + 1), rc.seed + 2);
  const GradcheckReport report = gradcheck(fragment);
  const bool pass = report.passed(rc.tolerance);
  out << "max_relative_error=" << std::scientific << std::setprecision(3) << report.max_relative_error
      << std::defaultfloat << " tolerance=" << rc.tolerance << " checked=" << report.checked
      << " one_sided=" << report.one_sided << " skipped=" << report.skipped << "\n";
  if (!report.finite) out << "failure: " << report.failure << "\n";
  if (!report.worst_slot.empty()) {
    out << "worst=" << report.worst_slot << "[" << report.worst_index << "] analytic=" << report.worst_analytic
        << " numeric=" << report.worst_numeric << "\n";
  }
  out << "gradcheck " << (pass ? "PASS" : "FAIL") << "\n";
  return pass ? kExitOk : kExitRuntime;
}

int cmd_flops(const RunConfig& rc, std::ostream& out) {
  const CBNetConfig requested = rc.net_config();
  std::vector<std::pair<std::string, CBNetConfig>> rows;
  CBNetConfig single = requested;
  single.k = 1;
  single.accelerated = false;
  single.share_weights = false;
  rows.emplace_back("single", single);
  CBNetConfig accel = single;
  accel.k = 2;
  accel.accelerated = true;
  rows.emplace_back("dual-accelerated", accel);
  CBNetConfig dual = single;
  dual.k = 2;
  rows.emplace_back("dual", dual);
  rows.emplace_back("requested", requested);

  out << "config params flops\n";
  for (const auto& [name, cfg] : rows) {
    const CBNet net = CBNet::build(cfg, rc.seed);
    out << name << " [" << describe(cfg) << "] params=" << param_count(net)
        << " flops=" << flop_count(net, cfg.spec.image_shape()) << "\n";
  }
  return kExitOk;
}

int cmd_viz(const RunConfig& rc, std::ostream& out) {
  CBNet net = build_net(rc);
  Head head = make_head(net.spec(), rc.seed);
  maybe_load(rc, net, head);
  const std::size_t last = net.spec().stages;
  std::vector<std::size_t> levels = rc.levels.empty() ? std::vector<std::size_t>{2, last} : rc.levels;
  for (std::size_t l : levels) {
    if (l < 2 || l > last) throw UsageError("viz: level " + std::to_string(l) + " is outside 2.." + std::to_string(last));
  }
  const fs::path out_dir(rc.out_dir);
  for (std::size_t l : levels) ensure_writable(out_dir / ("level" + std::to_string(l) + ".pgm"));

  net.set_bn_mode(BnMode::Inference);
  const SyntheticSample sample = gen_sample(rc.seed, net.spec().image_h);
  const FeaturePyramid pyramid = net.forward(sample.image);
  for (std::size_t l : levels) {
    const fs::path path = out_dir / ("level" + std::to_string(l) + ".pgm");
    const Heatmap map = heatmap_channel_mean(pyramid.level(l), "stage" + std::to_string(l));
    write_pgm(map, path);
    out << path.string() << " " << map.width << "x" << map.height << "\n";
  }
  return kExitOk;
}

void add_common_flags(CLI::App* sub, RunConfig& rc) {
  sub->add_option("--k", rc.k, "Number of backbones (1 = plain backbone)")->check(CLI::PositiveNumber);
  sub->add_option("--style", rc.style, "Composite style: ahlc, slc, allc, dhlc");
  sub->add_flag("--share-weights", rc.share_weights, "All backbones share one parameter store");
  sub->add_flag("--accelerated", rc.accelerated, "Drop the assistant's stem and stages 1-2 (k = 2)");
  sub->add_option("--seed", rc.seed, "Seed for weights and data");
  sub->add_option("--steps", rc.steps, "SGD steps");
  sub->add_option("--lr", rc.lr, "Learning rate")->check(CLI::NonNegativeNumber);
  sub->add_option("--n", rc.dataset_size, "Synthetic dataset size")->check(CLI::PositiveNumber);
  sub->add_option("--out", rc.out_dir, "Output directory");
  sub->add_option("--weights-in", rc.weights_in, "CBNW file to initialize from");
  sub->add_option("--weights-out", rc.weights_out, "CBNW file to write");
  sub->add_option("--tolerance", rc.tolerance, "Gradcheck tolerance")->check(CLI::PositiveNumber);
  sub->add_flag("--toy", rc.toy, "16x16 four-stage toy backbone");
  sub->add_option("--level", rc.levels, "Pyramid level to visualize (repeatable)");
}

}  // namespace

CBNetConfig RunConfig::net_config() const {
  CBNetConfig cfg;
  cfg.k = k;
  cfg.style = parse_style(style);
  cfg.share_weights = share_weights;
  cfg.accelerated = accelerated;
  if (toy) cfg.spec = BackboneSpec::toy();
  cfg.validate();
  return cfg;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Composite backbone network toolkit"};
  app.name("cbnet");
  app.require_subcommand(1, 1);
  RunConfig rc;
  using Command = int (*)(const RunConfig&, std::ostream&);
  const std::vector<std::pair<std::string, std::pair<std::string, Command>>> commands = {
      {"summarize", {"Print parameter and connection table", cmd_summarize}},
      {"train", {"Train on the synthetic task; writes weights and loss.csv", cmd_train}},
      {"eval", {"Evaluate cell F1 and class accuracy", cmd_eval}},
      {"gradcheck", {"Finite-difference check of the whole model", cmd_gradcheck}},
      {"flops", {"FLOP and parameter totals per configuration", cmd_flops}},
      {"viz", {"Write channel-mean heatmaps as PGM", cmd_viz}},
  };
  std::vector<std::pair<CLI::App*, Command>> subs;
  for (const auto& [name, entry] : commands) {
    CLI::App* sub = app.add_subcommand(name, entry.first);
    add_common_flags(sub, rc);
    subs.emplace_back(sub, entry.second);
  }

  std::vector<const char*> argv{"cbnet"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  Command command = nullptr;
  for (const auto& [sub, fn] : subs) {
    if (sub->parsed()) command = fn;
  }
  try {
    rc.net_config();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }
  try {
    return command(rc, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace cbnet
