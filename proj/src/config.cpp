#include "oen/config.hpp"

#include <set>

#include "oen/checkpoint.hpp"
#include "oen/fileio.hpp"

namespace oen {

namespace {

void check_fields(const nlohmann::json& j, const std::string& section, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError("config: section '" + section + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key)) throw ConfigError("config: unknown field '" + section + "." + key + "'");
    }
}

template <typename T>
void read_field(const nlohmann::json& j, const std::string& section, const std::string& key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config: field '" + section + "." + key + "' has the wrong type");
    }
}

GenParams parse_gen(const nlohmann::json& j) {
    check_fields(j, "gen",
                 {"profile", "num_images", "height", "width", "channels", "num_classes", "lesion_frac_min",
                  "lesion_frac_max", "distractor_frac_min", "distractor_frac_max", "field_scale", "background_amp",
                  "contrast", "secondary_contrast", "edge_softness", "noise_sigma", "train_frac", "val_frac", "seed"});
    GenParams p;
    if (j.contains("profile")) {
        const std::string profile = j.at("profile").get<std::string>();
        if (profile == "binary_imbalanced") {
            p = binary_imbalanced_profile();
        } else if (profile == "multiclass") {
            p = multiclass_profile();
        } else if (!profile.empty()) {
            throw ConfigError("config: unknown gen.profile '" + profile + "'");
        }
    }
    read_field(j, "gen", "num_images", p.num_images);
    read_field(j, "gen", "height", p.height);
    read_field(j, "gen", "width", p.width);
    read_field(j, "gen", "channels", p.channels);
    read_field(j, "gen", "num_classes", p.num_classes);
    read_field(j, "gen", "lesion_frac_min", p.lesion_frac_min);
    read_field(j, "gen", "lesion_frac_max", p.lesion_frac_max);
    read_field(j, "gen", "distractor_frac_min", p.distractor_frac_min);
    read_field(j, "gen", "distractor_frac_max", p.distractor_frac_max);
    read_field(j, "gen", "field_scale", p.field_scale);
    read_field(j, "gen", "background_amp", p.background_amp);
    read_field(j, "gen", "contrast", p.contrast);
    read_field(j, "gen", "secondary_contrast", p.secondary_contrast);
    read_field(j, "gen", "edge_softness", p.edge_softness);
    read_field(j, "gen", "noise_sigma", p.noise_sigma);
    read_field(j, "gen", "train_frac", p.train_frac);
    read_field(j, "gen", "val_frac", p.val_frac);
    read_field(j, "gen", "seed", p.seed);
    return p;
}

ArchConfig parse_arch(const nlohmann::json& j, const GenParams& gen) {
    check_fields(j, "arch", {"in_channels", "num_classes", "head", "base_channels"});
    ArchConfig arch;
    arch.in_channels = gen.channels;
    arch.num_classes = gen.num_classes;
    arch.head = gen.num_classes == 2 ? Head::sigmoid : Head::softmax;
    read_field(j, "arch", "in_channels", arch.in_channels);
    read_field(j, "arch", "num_classes", arch.num_classes);
    if (j.contains("head")) {
        std::string head;
        read_field(j, "arch", "head", head);
        try {
            arch.head = head_from_name(head);
        } catch (const std::invalid_argument& ex) {
            throw ConfigError(std::string("config: arch.head: ") + ex.what());
        }
    }
    read_field(j, "arch", "base_channels", arch.base_channels);
    return arch;
}

OrthoConfig parse_ortho(const nlohmann::json& j) {
    check_fields(j, "train.ortho", {"lambda", "epsilon", "layers", "lambda_self", "lambda_inter"});
    OrthoConfig cfg;
    read_field(j, "train.ortho", "lambda", cfg.lambda);
    read_field(j, "train.ortho", "epsilon", cfg.epsilon);
    if (j.contains("layers") && !j.at("layers").is_string()) {
        std::vector<int> layers;
        read_field(j, "train.ortho", "layers", layers);
        cfg.layer_selection = layers;
    } else if (j.contains("layers")) {
        const std::string v = j.at("layers").get<std::string>();
        if (v != "all") throw ConfigError("config: train.ortho.layers must be \"all\" or an index list");
    }
    if (j.contains("lambda_self")) {
        double v = 0.0;
        read_field(j, "train.ortho", "lambda_self", v);
        cfg.lambda_self = v;
    }
    if (j.contains("lambda_inter")) {
        double v = 0.0;
        read_field(j, "train.ortho", "lambda_inter", v);
        cfg.lambda_inter = v;
    }
    return cfg;
}

TrainConfig parse_train(const nlohmann::json& j) {
    check_fields(j, "train",
                 {"ortho", "seg_loss", "optimizer", "lr_schedule", "epochs", "batch_size", "batches_per_epoch",
                  "patch_size", "foreground_sample_prob", "seed", "jobs", "dice_smooth", "dice_exclude_background"});
    TrainConfig cfg;
    if (j.contains("ortho")) cfg.ortho = parse_ortho(j.at("ortho"));
    if (j.contains("seg_loss")) {
        std::string name;
        read_field(j, "train", "seg_loss", name);
        try {
            cfg.seg_loss = seg_loss_from_name(name);
        } catch (const std::invalid_argument& ex) {
            throw ConfigError(std::string("config: train.seg_loss: ") + ex.what());
        }
    }
    if (j.contains("optimizer")) {
        const nlohmann::json& o = j.at("optimizer");
        check_fields(o, "train.optimizer", {"lr", "beta1", "beta2", "eps"});
        read_field(o, "train.optimizer", "lr", cfg.optimizer.lr);
        read_field(o, "train.optimizer", "beta1", cfg.optimizer.beta1);
        read_field(o, "train.optimizer", "beta2", cfg.optimizer.beta2);
        read_field(o, "train.optimizer", "eps", cfg.optimizer.eps);
    }
    if (j.contains("lr_schedule")) {
        const nlohmann::json& s = j.at("lr_schedule");
        check_fields(s, "train.lr_schedule", {"factor", "period_epochs"});
        read_field(s, "train.lr_schedule", "factor", cfg.lr_schedule.factor);
        read_field(s, "train.lr_schedule", "period_epochs", cfg.lr_schedule.period_epochs);
    }
    read_field(j, "train", "epochs", cfg.epochs);
    read_field(j, "train", "batch_size", cfg.batch_size);
    read_field(j, "train", "batches_per_epoch", cfg.batches_per_epoch);
    read_field(j, "train", "patch_size", cfg.patch_size);
    read_field(j, "train", "foreground_sample_prob", cfg.foreground_sample_prob);
    read_field(j, "train", "seed", cfg.seed);
    read_field(j, "train", "jobs", cfg.jobs);
    read_field(j, "train", "dice_smooth", cfg.seg_loss_options.smooth);
    read_field(j, "train", "dice_exclude_background", cfg.seg_loss_options.exclude_background);
    return cfg;
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
    check_fields(j, "<root>", {"gen", "arch", "train"});
    RunConfig cfg;
    cfg.gen = j.contains("gen") ? parse_gen(j.at("gen")) : GenParams{};
    cfg.arch = parse_arch(j.contains("arch") ? j.at("arch") : nlohmann::json::object(), cfg.gen);
    cfg.train = j.contains("train") ? parse_train(j.at("train")) : TrainConfig{};
    try {
        cfg.train.validate();
    } catch (const std::invalid_argument& ex) {
        throw ConfigError(std::string("config: ") + ex.what());
    }
    return cfg;
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json ortho{{"lambda", cfg.train.ortho.lambda}, {"epsilon", cfg.train.ortho.epsilon}};
    if (cfg.train.ortho.layer_selection.has_value()) {
        ortho["layers"] = *cfg.train.ortho.layer_selection;
    } else {
        ortho["layers"] = "all";
    }
    if (cfg.train.ortho.lambda_self.has_value()) ortho["lambda_self"] = *cfg.train.ortho.lambda_self;
    if (cfg.train.ortho.lambda_inter.has_value()) ortho["lambda_inter"] = *cfg.train.ortho.lambda_inter;
    nlohmann::json train{{"ortho", ortho},
                         {"seg_loss", seg_loss_name(cfg.train.seg_loss)},
                         {"optimizer",
                          {{"lr", cfg.train.optimizer.lr},
                           {"beta1", cfg.train.optimizer.beta1},
                           {"beta2", cfg.train.optimizer.beta2},
                           {"eps", cfg.train.optimizer.eps}}},
                         {"lr_schedule",
                          {{"factor", cfg.train.lr_schedule.factor},
                           {"period_epochs", cfg.train.lr_schedule.period_epochs}}},
                         {"epochs", cfg.train.epochs},
                         {"batch_size", cfg.train.batch_size},
                         {"batches_per_epoch", cfg.train.batches_per_epoch},
                         {"patch_size", cfg.train.patch_size},
                         {"foreground_sample_prob", cfg.train.foreground_sample_prob},
                         {"seed", cfg.train.seed},
                         {"jobs", cfg.train.jobs},
                         {"dice_smooth", cfg.train.seg_loss_options.smooth},
                         {"dice_exclude_background", cfg.train.seg_loss_options.exclude_background}};
    return {{"gen", gen_params_to_json(cfg.gen)}, {"arch", arch_to_json(cfg.arch)}, {"train", train}};
}

RunConfig load_run_config(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file_bytes(path));
    } catch (const nlohmann::json::parse_error& ex) {
        throw ConfigError("config: cannot parse " + path + ": " + ex.what());
    }
    return run_config_from_json(j);
}

}  // namespace oen
