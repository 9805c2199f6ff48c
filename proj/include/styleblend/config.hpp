#ifndef STYLEBLEND_CONFIG_HPP
#define STYLEBLEND_CONFIG_HPP

#include <json.hpp>
#include <stdexcept>
#include <string>

namespace styleblend {

// malformed config file / invalid values -> CLI exit code 3
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// failed validation of inputs or results -> CLI exit code 2
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelConfig {
    int image_size = 32;
    int base_width = 16;
    int time_dim = 64;
    int text_dim = 64;
    int text_blocks = 2;
    int groups = 8;
};

// Every knob in one place. Defaults carry the reference hyperparameters:
// adapter rank 16, lr 1e-4 for adapters / 1e-2 for the style embedding,
// 500 texture steps, 300 composition steps, 10 edit images per reference at
// strength 0.8, 20-step linear sampling.
struct Config {
    ModelConfig model;

    // schedule
    int timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    // base-model pretraining
    int pretrain_steps = 1600;
    int pretrain_batch = 4;
    double pretrain_lr = 1e-3;
    int pretrain_warmup = 100;
    double pretrain_ema_decay = 0.999;  // 0 disables the weight average
    double styled_prompt_fraction = 0.5;

    // texture style learning
    int texture_embed_steps = 500;
    int texture_lora_steps = 500;
    double lr_embedding = 1e-2;
    double lr_lora = 1e-4;
    int lora_rank = 16;
    int style_batch = 4;

    // composition style learning
    int composition_steps = 300;
    int sdedit_per_ref = 10;
    double sdedit_strength = 0.8;

    // sampling
    int sample_steps = 20;
    double ddim_eta = 0.0;
    double guidance_scale = 0.0;  // 0 = off

    // synthetic corpus
    int corpus_per_cell = 50;
    int corpus_val_per_cell = 8;
    std::string heldout_style = "voltage";

    // evaluation
    int probe_epochs = 10;
    double probe_lr = 1e-3;
    int eval_per_class = 4;

    void validate() const {
        auto need = [](bool ok, const std::string& what) {
            if (!ok) throw ConfigError("config: " + what);
        };
        need(model.image_size == 32, "image_size must be 32");
        need(model.base_width >= 4 && model.base_width % 4 == 0, "base_width must be a positive multiple of 4");
        need(model.time_dim >= 8 && model.time_dim % 2 == 0, "time_dim must be even and >= 8");
        need(model.text_dim >= 8, "text_dim must be >= 8");
        need(model.text_blocks >= 1, "text_blocks must be >= 1");
        need(model.groups >= 1 && model.base_width % model.groups == 0, "groups must divide base_width");
        need(timesteps >= 1, "timesteps must be >= 1");
        need(beta_start > 0 && beta_end < 1 && beta_start <= beta_end, "betas must satisfy 0 < start <= end < 1");
        need(pretrain_steps >= 0 && pretrain_batch >= 1, "pretrain steps/batch invalid");
        need(pretrain_warmup >= 0, "pretrain_warmup must be >= 0");
        need(pretrain_ema_decay >= 0.0 && pretrain_ema_decay < 1.0, "pretrain_ema_decay must lie in [0,1)");
        need(texture_embed_steps >= 0 && texture_lora_steps >= 0, "texture step counts invalid");
        need(lr_embedding > 0 && lr_lora > 0 && pretrain_lr > 0, "learning rates must be positive");
        need(lora_rank >= 1, "lora_rank must be >= 1");
        need(style_batch >= 1, "style_batch must be >= 1");
        need(composition_steps >= 0, "composition_steps invalid");
        need(sdedit_per_ref >= 1, "sdedit_per_ref must be >= 1");
        need(sdedit_strength > 0.0 && sdedit_strength < 1.0, "sdedit_strength must lie in (0,1)");
        need(sample_steps >= 1 && sample_steps <= timesteps, "sample_steps must lie in [1,timesteps]");
        need(ddim_eta >= 0.0, "ddim_eta must be >= 0");
        need(styled_prompt_fraction >= 0.0 && styled_prompt_fraction <= 1.0, "styled_prompt_fraction in [0,1]");
        need(corpus_per_cell >= 1 && corpus_val_per_cell >= 1, "corpus sizes invalid");
        need(probe_epochs >= 1 && probe_lr > 0, "probe config invalid");
        need(eval_per_class >= 1, "eval_per_class must be >= 1");
    }
};

inline nlohmann::json config_to_json(const Config& c) {
    return nlohmann::json{
        {"model",
         {{"image_size", c.model.image_size},
          {"base_width", c.model.base_width},
          {"time_dim", c.model.time_dim},
          {"text_dim", c.model.text_dim},
          {"text_blocks", c.model.text_blocks},
          {"groups", c.model.groups}}},
        {"schedule", {{"timesteps", c.timesteps}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}}},
        {"pretrain",
         {{"steps", c.pretrain_steps},
          {"batch", c.pretrain_batch},
          {"lr", c.pretrain_lr},
          {"warmup", c.pretrain_warmup},
          {"ema_decay", c.pretrain_ema_decay},
          {"styled_prompt_fraction", c.styled_prompt_fraction}}},
        {"texture",
         {{"embed_steps", c.texture_embed_steps},
          {"lora_steps", c.texture_lora_steps},
          {"lr_embedding", c.lr_embedding},
          {"lr_lora", c.lr_lora},
          {"rank", c.lora_rank},
          {"batch", c.style_batch}}},
        {"composition",
         {{"steps", c.composition_steps}, {"per_ref", c.sdedit_per_ref}, {"strength", c.sdedit_strength}}},
        {"sampling", {{"steps", c.sample_steps}, {"eta", c.ddim_eta}, {"guidance_scale", c.guidance_scale}}},
        {"corpus",
         {{"per_cell", c.corpus_per_cell},
          {"val_per_cell", c.corpus_val_per_cell},
          {"heldout_style", c.heldout_style}}},
        {"eval", {{"probe_epochs", c.probe_epochs}, {"probe_lr", c.probe_lr}, {"per_class", c.eval_per_class}}}};
}

inline Config config_from_json(const nlohmann::json& j) {
    Config c;
    try {
        auto get = [](const nlohmann::json& o, const char* key, auto& dst) {
            if (o.contains(key)) dst = o.at(key).template get<std::decay_t<decltype(dst)>>();
        };
        if (j.contains("model")) {
            const auto& m = j.at("model");
            get(m, "image_size", c.model.image_size);
            get(m, "base_width", c.model.base_width);
            get(m, "time_dim", c.model.time_dim);
            get(m, "text_dim", c.model.text_dim);
            get(m, "text_blocks", c.model.text_blocks);
            get(m, "groups", c.model.groups);
        }
        if (j.contains("schedule")) {
            const auto& s = j.at("schedule");
            get(s, "timesteps", c.timesteps);
            get(s, "beta_start", c.beta_start);
            get(s, "beta_end", c.beta_end);
        }
        if (j.contains("pretrain")) {
            const auto& p = j.at("pretrain");
            get(p, "steps", c.pretrain_steps);
            get(p, "batch", c.pretrain_batch);
            get(p, "lr", c.pretrain_lr);
            get(p, "warmup", c.pretrain_warmup);
            get(p, "ema_decay", c.pretrain_ema_decay);
            get(p, "styled_prompt_fraction", c.styled_prompt_fraction);
        }
        if (j.contains("texture")) {
            const auto& t = j.at("texture");
            get(t, "embed_steps", c.texture_embed_steps);
            get(t, "lora_steps", c.texture_lora_steps);
            get(t, "lr_embedding", c.lr_embedding);
            get(t, "lr_lora", c.lr_lora);
            get(t, "rank", c.lora_rank);
            get(t, "batch", c.style_batch);
        }
        if (j.contains("composition")) {
            const auto& o = j.at("composition");
            get(o, "steps", c.composition_steps);
            get(o, "per_ref", c.sdedit_per_ref);
            get(o, "strength", c.sdedit_strength);
        }
        if (j.contains("sampling")) {
            const auto& s = j.at("sampling");
            get(s, "steps", c.sample_steps);
            get(s, "eta", c.ddim_eta);
            get(s, "guidance_scale", c.guidance_scale);
        }
        if (j.contains("corpus")) {
            const auto& s = j.at("corpus");
            get(s, "per_cell", c.corpus_per_cell);
            get(s, "val_per_cell", c.corpus_val_per_cell);
            get(s, "heldout_style", c.heldout_style);
        }
        if (j.contains("eval")) {
            const auto& e = j.at("eval");
            get(e, "probe_epochs", c.probe_epochs);
            get(e, "probe_lr", c.probe_lr);
            get(e, "per_class", c.eval_per_class);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

}  // namespace styleblend

#endif
