use bcer2_node::{init_data_dir, InitOptions, NodeConfig};

#[test]
fn data_dir_env_var_wins_over_configured_path() {
    let real = tempfile::tempdir().unwrap();
    init_data_dir(real.path(), &InitOptions { network_id: "env-net".into(), validators: 3, ..Default::default() })
        .unwrap();
    std::env::set_var("BCER2_DATA_DIR", real.path());
    let config = NodeConfig::load("/nonexistent/elsewhere", "127.0.0.1:0".parse().unwrap()).unwrap();
    std::env::remove_var("BCER2_DATA_DIR");
    assert_eq!(config.data_dir, real.path());
    assert_eq!(config.network_id, "env-net");
    assert_eq!(config.quorum, 2);
}
