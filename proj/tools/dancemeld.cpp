#include <chrono>
#include <iostream>

#include <CLI11.hpp>

#include "dancemeld/cli/pipeline.hpp"
#include "dancemeld/latent/tools.hpp"
#include "dancemeld/service/http.hpp"

using namespace dancemeld;
using nlohmann::json;

namespace {

// Paths next to `out`: "run/vq.dmck" + ".log.json" -> "run/vq.log.json",
// "run/a.codes.json" + ".dmmo" -> "run/a.dmmo".
io::fs::path sibling(const io::fs::path& out, const std::string& suffix) {
  auto p = out;
  p.replace_extension();
  if (p.extension() == ".codes") p.replace_extension();
  p += suffix;
  return p;
}

double clock_now() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

void progress(const std::string& what, std::size_t epoch, std::size_t epochs, double loss, double started) {
  std::cerr << what << " epoch " << epoch + 1 << "/" << epochs << " loss " << loss << " ("
            << int(clock_now() - started) << " s)" << std::endl;
}

struct SynthArgs {
  dataset::SynthOptions opt;
  std::string out;
};

void synth_data(const SynthArgs& a) {
  const auto corpus = dataset::generate_synthetic_corpus(a.opt);
  dataset::save_corpus(corpus, a.out);
  std::cout << json{{"clips", corpus.clips.size()}, {"manifest", (io::fs::path(a.out) / "manifest.json").string()}}
            << std::endl;
}

struct TrainArgs {
  std::string corpus, vq, config, out, resume;
  bool center = false;
};

void train_vqvae(const TrainArgs& a) {
  const auto cfg = cli::read_config<hvqvae::VQTrainConfig>(a.config);
  const auto corpus = dataset::load_corpus(a.corpus, a.center);
  hvqvae::VQTrainer trainer(cfg, corpus);
  if (!a.resume.empty()) trainer.resume(io::load_checkpoint(a.resume));
  trainer.on_divergence = [&](const hvqvae::VQTrainer& t) {
    io::save_checkpoint(sibling(a.out, ".diverged.dmck"), t.checkpoint());
  };
  const double started = clock_now();
  trainer.train([&](const hvqvae::EpochLog& l) { progress("vqvae", l.epoch, cfg.epochs, l.loss, started); });
  io::save_checkpoint(a.out, trainer.checkpoint());
  io::write_file_atomic(sibling(a.out, ".log.json"), json(trainer.history()).dump(2));
}

void train_prior(const TrainArgs& a) {
  const auto cfg = cli::read_config<diffusion::PriorTrainConfig>(a.config);
  const auto corpus = dataset::load_corpus(a.corpus, a.center);
  const auto vq = hvqvae::load_hvqvae(a.vq);
  diffusion::PriorTrainer trainer(cfg, *vq, corpus);
  if (!a.resume.empty()) trainer.resume(io::load_checkpoint(a.resume));
  trainer.on_divergence = [&](const diffusion::PriorTrainer& t) {
    io::save_checkpoint(sibling(a.out, ".diverged.dmck"), t.checkpoint());
  };
  const double started = clock_now();
  trainer.train([&](const diffusion::PriorEpochLog& l) { progress("prior", l.epoch, cfg.epochs, l.loss, started); });
  io::save_checkpoint(a.out, trainer.checkpoint());
  io::write_file_atomic(sibling(a.out, ".log.json"), json(trainer.history()).dump(2));
}

struct GenerateArgs {
  std::string vq, prior, music, out, codes;
  std::size_t steps = 50, windows = 1;
  std::uint64_t seed = 0;
};

void generate(const GenerateArgs& a) {
  const auto vq = hvqvae::load_hvqvae(a.vq);
  const auto prior = diffusion::load_prior(a.prior);
  DM_THROW_IF(a.windows == 0, InvalidArgument, "--windows must be >= 1");
  const std::size_t window = cli::generation_window(*prior);
  const auto m = cli::resolve_music(a.music, a.windows * window, window, prior->config().cond_dim, a.seed);
  const auto gen = diffusion::generate(m.features, *vq, *prior, a.steps, a.seed);
  const auto codes_path = a.codes.empty() ? sibling(a.out, ".codes.json") : io::fs::path(a.codes);
  dataset::save_motion(a.out, gen.motion);
  latent::save_codes(codes_path, gen.codes, window);
  std::cout << json{{"motion", a.out}, {"codes", codes_path.string()}, {"frames", gen.motion.length()}} << std::endl;
}

struct EvalArgs {
  std::string vq, prior, corpus, out;
  cli::EvalOptions opt;
  bool center = false;
};

void eval(const EvalArgs& a) {
  const auto vq = hvqvae::load_hvqvae(a.vq);
  const auto prior = diffusion::load_prior(a.prior);
  const auto corpus = dataset::load_corpus(a.corpus, a.center);
  const auto report = cli::evaluate_models(*vq, *prior, corpus, a.opt);
  io::write_file_atomic(a.out, json(report).dump(2));
  std::cout << metrics::report_table(report);
}

struct EditArgs {
  std::string codes, ops, vq, out, motion;
};

void edit(const EditArgs& a) {
  const auto vq = hvqvae::load_hvqvae(a.vq);
  const auto codes = latent::load_codes(a.codes);
  const auto window = json::parse(io::read_file(a.codes)).value("window", std::size_t(512));
  const auto ops = latent::load_edit_ops(a.ops);
  const auto result = latent::apply_edits(codes, ops, *vq);
  const auto motion_path = a.motion.empty() ? sibling(a.out, ".dmmo") : io::fs::path(a.motion);
  dataset::save_motion(motion_path, result.motion);
  latent::save_codes(a.out, result.codes, window);
  std::cout << json{{"codes", a.out}, {"motion", motion_path.string()}, {"frames", result.motion.length()}}
            << std::endl;
}

struct ExportArgs {
  std::string motion, format = "json", out, corpus;
};

void export_motion(const ExportArgs& a) {
  DM_THROW_IF(a.format != "json", InvalidArgument, "unsupported export format '" + a.format + "'");
  const auto skel = a.corpus.empty() ? motion::builtin_skeleton() : dataset::load_corpus(a.corpus).skeleton;
  const auto doc = cli::export_positions(dataset::load_motion(a.motion), skel).dump();
  if (a.out.empty())
    std::cout << doc << std::endl;
  else
    io::write_file_atomic(a.out, doc);
}

struct ServeArgs {
  std::string vq, prior, host = "127.0.0.1", static_dir, data_dir;
  int port = 8080;
};

void serve(const ServeArgs& a) {
  std::optional<service::LoadedModels> models;
  if (!a.vq.empty() && !a.prior.empty())
    models = service::load_models(a.vq, a.prior);
  else
    std::cerr << "no --vq/--prior given; model endpoints answer 409" << std::endl;
  const auto data_dir = a.data_dir.empty() ? service::default_data_dir() : io::fs::path(a.data_dir);
  service::Service svc(std::move(models), data_dir, motion::builtin_skeleton());
  httplib::Server server;
  service::mount(server, svc, a.static_dir);
  const int port = a.port == 0 ? server.bind_to_any_port(a.host) : (server.bind_to_port(a.host, a.port) ? a.port : -1);
  DM_THROW_IF(port < 0, IoError, "cannot bind " + a.host + ":" + std::to_string(a.port));
  std::cerr << "listening on http://" << a.host << ":" << port << " (data " << data_dir.string() << ")" << std::endl;
  server.listen_after_bind();
}

int fail(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DanceMeld: music-to-dance generation with a two-level VQ-VAE and a latent diffusion prior"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c = app.add_subcommand("synth-data", "Write a synthetic beat-locked corpus");
  c->add_option("--seed", synth.opt.seed);
  c->add_option("--clips", synth.opt.clips);
  c->add_option("--frames", synth.opt.frames, "Frames per clip");
  c->add_option("--music-dim", synth.opt.music_dim, "Music feature channels");
  c->add_option("--tempos", synth.opt.tempos, "BPM values, assigned round-robin");
  c->add_option("--out", synth.out, "Corpus directory")->required();
  c->callback([&] { synth_data(synth); });

  TrainArgs vq_train;
  c = app.add_subcommand("train-vqvae", "Train the two-level VQ-VAE");
  c->add_option("--corpus", vq_train.corpus)->required();
  c->add_flag("--center", vq_train.center, "Move each clip's first root position to the ground-plane origin");
  c->add_option("--config", vq_train.config, "JSON merged over the defaults");
  c->add_option("--resume", vq_train.resume, "Checkpoint to continue from");
  c->add_option("--out", vq_train.out, "Checkpoint path")->required();
  c->callback([&] { train_vqvae(vq_train); });

  TrainArgs prior_train;
  c = app.add_subcommand("train-prior", "Train the diffusion prior on frozen VQ-VAE latents");
  c->add_option("--corpus", prior_train.corpus)->required();
  c->add_flag("--center", prior_train.center, "Move each clip's first root position to the ground-plane origin");
  c->add_option("--vq", prior_train.vq)->required();
  c->add_option("--config", prior_train.config, "JSON merged over the defaults");
  c->add_option("--resume", prior_train.resume, "Checkpoint to continue from");
  c->add_option("--out", prior_train.out, "Checkpoint path")->required();
  c->callback([&] { train_prior(prior_train); });

  GenerateArgs gen;
  c = app.add_subcommand("generate", "Generate dance for a music track");
  c->add_option("--vq", gen.vq)->required();
  c->add_option("--prior", gen.prior)->required();
  c->add_option("--music", gen.music, "Feature file or click:BPM")->required();
  c->add_option("--steps", gen.steps, "DDIM steps");
  c->add_option("--seed", gen.seed);
  c->add_option("--windows", gen.windows, "Length in prior windows (click tracks)");
  c->add_option("--out", gen.out, "Motion file")->required();
  c->add_option("--codes", gen.codes, "Codes JSON (default: beside --out)");
  c->callback([&] { generate(gen); });

  EvalArgs ev;
  c = app.add_subcommand("eval", "Score generations against the test split");
  c->add_option("--vq", ev.vq)->required();
  c->add_option("--prior", ev.prior)->required();
  c->add_option("--corpus", ev.corpus)->required();
  c->add_flag("--center", ev.center, "Move each clip's first root position to the ground-plane origin");
  c->add_option("--generations", ev.opt.generations);
  c->add_option("--steps", ev.opt.steps, "DDIM steps");
  c->add_option("--seed", ev.opt.seed);
  c->add_option("--out", ev.out, "MetricReport JSON")->required();
  c->callback([&] { eval(ev); });

  EditArgs ed;
  c = app.add_subcommand("edit", "Apply edit ops to a codes file and re-decode");
  c->add_option("--codes", ed.codes)->required();
  c->add_option("--ops", ed.ops, "JSON array of edit ops")->required();
  c->add_option("--vq", ed.vq)->required();
  c->add_option("--out", ed.out, "Edited codes JSON")->required();
  c->add_option("--motion", ed.motion, "Decoded motion (default: beside --out)");
  c->callback([&] { edit(ed); });

  ExportArgs ex;
  c = app.add_subcommand("export", "Joint positions for the viewer");
  c->add_option("--motion", ex.motion)->required();
  c->add_option("--format", ex.format);
  c->add_option("--corpus", ex.corpus, "Take the skeleton from this corpus");
  c->add_option("--out", ex.out, "Output file (default: stdout)");
  c->callback([&] { export_motion(ex); });

  ServeArgs sv;
  c = app.add_subcommand("serve", "HTTP API for the editor");
  c->add_option("--vq", sv.vq);
  c->add_option("--prior", sv.prior);
  c->add_option("--host", sv.host);
  c->add_option("--port", sv.port, "0 picks a free port");
  c->add_option("--static", sv.static_dir, "UI assets served at /");
  c->add_option("--data-dir", sv.data_dir, "Session store (default: $DM_DATA_DIR)");
  c->callback([&] { serve(sv); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    return fail(std::string(e.name()), e.detail());
  } catch (const json::exception& e) {
    return fail("FormatError", e.what());
  } catch (const std::exception& e) {
    return fail("Internal", e.what());
  }
  return 0;
}
